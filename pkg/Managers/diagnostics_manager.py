# Managers/diagnostics_manager.py

"""
Relevance-score diagnostics over score dumps: a 20-bucket histogram of eta_uns
per model variant, and a 2-D projection of the table-token latents labelled
relevant when the token's score exceeds the variant's average score.
"""
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import entropy
from sklearn.decomposition import PCA
from sklearn.manifold import TSNE

from Core.errors import DiagnosticsError, TableQAError
from Managers.evaluation_manager import HISTOGRAM_BUCKETS, MIDDLE_BAND, SCORE_DUMP_SCHEMA
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2
from Utils.save_utils import read_jsonl

logger = get_logger()

DIAGNOSTICS_SCHEMA = "tableqa-diagnostics"
DIAGNOSTICS_VERSION = 1
PROJECTIONS = ("pca", "tsne")


@dataclass
class VariantScores:
    name: str
    eta_uns: List[np.ndarray] = field(default_factory=list)
    latents: List[np.ndarray] = field(default_factory=list)

    @property
    def scores(self) -> np.ndarray:
        return np.concatenate(self.eta_uns) if self.eta_uns else np.zeros(0)


def load_score_dumps(paths: Sequence[str]) -> "OrderedDict[str, VariantScores]":
    """Group dump records by variant (record field, then header, then file name)."""
    variants: "OrderedDict[str, VariantScores]" = OrderedDict()
    for path in paths:
        try:
            header, records = read_jsonl(path, schema=SCORE_DUMP_SCHEMA)
        except TableQAError as e:
            raise DiagnosticsError(str(e)) from e
        fallback = (header or {}).get("variant") or os.path.splitext(os.path.basename(path))[0]
        for record in records:
            name = record.get("variant") or fallback
            entry = variants.setdefault(name, VariantScores(name))
            entry.eta_uns.append(np.asarray(record.get("eta_uns", []), dtype=float))
            if record.get("latents"):
                entry.latents.append(np.asarray(record["latents"], dtype=float))
        logger.debug_at_level(DEBUG_L2, "Diagnostics", f"Read {len(records)} records from {path}")
    if not variants or all(v.scores.size == 0 for v in variants.values()):
        raise DiagnosticsError(f"No relevance scores in {list(paths)}")
    return variants


def score_histogram(scores: np.ndarray, buckets: int = HISTOGRAM_BUCKETS) -> Dict:
    if scores.size == 0:
        raise DiagnosticsError("Cannot build a histogram of zero scores")
    counts, edges = np.histogram(scores, bins=buckets, range=(0.0, 1.0))
    lo, hi = MIDDLE_BAND
    return {
        "counts": counts.tolist(),
        "edges": np.round(edges, 6).tolist(),
        "n_tokens": int(scores.size),
        "mean": float(scores.mean()),
        "middle_fraction": float(((scores >= lo) & (scores <= hi)).mean()),
        "entropy": float(entropy(counts / counts.sum())),
    }


def relevance_labels(scores: np.ndarray) -> np.ndarray:
    """True where the score is greater than the average score."""
    return scores > scores.mean()


def project_latents(latents: np.ndarray, method: str = "pca", seed: int = 0) -> np.ndarray:
    """(N, d) -> (N, 2), deterministic for a given seed."""
    if method not in PROJECTIONS:
        raise DiagnosticsError(f"Unknown projection '{method}', expected one of {PROJECTIONS}")
    n = latents.shape[0]
    if n < 3:
        raise DiagnosticsError(f"Need at least 3 latent vectors to project, got {n}")
    if method == "pca":
        components = min(2, latents.shape[1])
        points = PCA(n_components=components, svd_solver="full").fit_transform(latents)
        if components < 2:
            points = np.hstack([points, np.zeros((n, 1))])
        return points
    perplexity = float(min(30, n - 1))
    return TSNE(n_components=2, perplexity=perplexity, init="pca", random_state=seed).fit_transform(latents)


def diagnose(paths: Sequence[str], projection: Optional[str] = "pca", seed: int = 0) -> Dict:
    """Histogram per variant plus, where dumps carry latents, labelled projection coordinates."""
    variants = load_score_dumps(paths)
    out = {"schema": DIAGNOSTICS_SCHEMA, "version": DIAGNOSTICS_VERSION, "projection": projection,
           "variants": OrderedDict()}
    for name, entry in variants.items():
        scores = entry.scores
        if scores.size == 0:
            logger.warning("Diagnostics", f"Variant '{name}' has no table tokens; skipped")
            continue
        result = {"histogram": score_histogram(scores)}
        if projection and entry.latents:
            latents = np.concatenate(entry.latents)
            if latents.shape[0] != scores.size:
                raise DiagnosticsError(f"Variant '{name}': {latents.shape[0]} latents for {scores.size} scores")
            labels = relevance_labels(scores)
            points = project_latents(latents, projection, seed)
            result["projection"] = {
                "method": projection,
                "points": np.round(points, 6).tolist(),
                "relevant": labels.tolist(),
                "n_relevant": int(labels.sum()),
                "n_irrelevant": int((~labels).sum()),
            }
        elif projection:
            logger.debug_at_level(DEBUG_L1, "Diagnostics", f"Variant '{name}' has no latents; no projection")
        out["variants"][name] = result
        hist = result["histogram"]
        logger.info("Diagnostics", f"{name}: {hist['n_tokens']} tokens, middle fraction "
                                   f"{hist['middle_fraction']:.3f}, mean {hist['mean']:.3f}")
    if not out["variants"]:
        raise DiagnosticsError("Every variant in the score dumps was empty")
    return out
