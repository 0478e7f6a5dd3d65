# Managers/ablation_manager.py

"""
Ablation grids: one train + evaluate run per (row, seed), a result matrix
with per-row means, and seed-majority verdicts for the directional
comparisons a preset declares.

Preset format (Config/Presets/<name>.json):

    {"name": ..., "rows": [{"label": ..., "overrides": {...}}, ...],
     "perturbations": ["ra", ...],
     "comparisons": [{"name": ..., "left": label, "op": ">=", "right": label,
                      "metric": "accuracy"}, ...]}
"""
import operator
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from Core.errors import ConfigError
from Core.perturbations import KIND_NAMES, PERTURBATION_KINDS, PerturbationSpec
from Core.synth_tasks import QAExample, SIZE_BIN_LABELS
from Core.vocabulary import Vocabulary
from Managers.evaluation_manager import EvalReport, evaluate, write_score_dump
from Managers.training_manager import Trainer
from Utils.config_utils import TrainConfig
from Utils.log_utils import get_logger, DEBUG_L1

logger = get_logger()

ABLATION_SCHEMA = "tableqa-ablation"
ABLATION_VERSION = 1

OPERATORS = {">=": operator.ge, ">": operator.gt, "<=": operator.le, "<": operator.lt}
METRICS = ("accuracy", "middle_fraction", "relevance_gap", "ra_drop", "largest_bin_accuracy")


def run_metrics(report: EvalReport) -> Dict[str, Optional[float]]:
    """Scalar metrics used by comparisons, from one evaluation report."""
    relevance = report.relevance
    gap = None
    if relevance.get("mean_eta_gold") is not None and relevance.get("mean_eta_non_gold") is not None:
        gap = relevance["mean_eta_gold"] - relevance["mean_eta_non_gold"]
    largest = None
    populated = [label for label in SIZE_BIN_LABELS if label in report.per_size_bin]
    if populated:
        largest = report.per_size_bin[populated[-1]]["accuracy"]
    ra = report.perturbations.get(KIND_NAMES["ra"], {})
    return {
        "accuracy": report.accuracy,
        "middle_fraction": relevance.get("middle_fraction"),
        "relevance_gap": gap,
        "ra_drop": ra.get("relative_drop"),
        "largest_bin_accuracy": largest,
    }


@dataclass
class RowResult:
    label: str
    overrides: Dict
    runs: List[Dict] = field(default_factory=list)

    def mean(self) -> Dict[str, Optional[float]]:
        out = {}
        for metric in METRICS:
            values = [r["metrics"][metric] for r in self.runs if r["metrics"][metric] is not None]
            out[metric] = float(np.mean(values)) if values else None
        return out

    def to_dict(self) -> Dict:
        return {"label": self.label, "overrides": self.overrides, "runs": self.runs, "mean": self.mean()}


@dataclass
class AblationResult:
    name: str
    seeds: List[int]
    rows: List[RowResult] = field(default_factory=list)
    verdicts: List[Dict] = field(default_factory=list)

    def row(self, label: str) -> RowResult:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> Dict:
        return {"schema": ABLATION_SCHEMA, "version": ABLATION_VERSION, "name": self.name, "seeds": self.seeds,
                "rows": [r.to_dict() for r in self.rows], "verdicts": self.verdicts}


def majority_verdict(result: AblationResult, comparison: Dict) -> Dict:
    """Evaluate one comparison per seed; it holds when a strict majority of seeds agree."""
    op = OPERATORS.get(comparison.get("op", ">="))
    metric = comparison.get("metric", "accuracy")
    if op is None or metric not in METRICS:
        raise ConfigError(f"Invalid comparison {comparison}")
    left, right = result.row(comparison["left"]), result.row(comparison["right"])
    per_seed = []
    for seed in result.seeds:
        a = next((r["metrics"][metric] for r in left.runs if r["seed"] == seed), None)
        b = next((r["metrics"][metric] for r in right.runs if r["seed"] == seed), None)
        per_seed.append(None if a is None or b is None else bool(op(a, b)))
    decided = [v for v in per_seed if v is not None]
    holds = sum(decided) * 2 > len(result.seeds)
    return {"name": comparison.get("name", f"{comparison['left']} {comparison.get('op', '>=')} {comparison['right']}"),
            "metric": metric, "per_seed": per_seed, "holds": holds}


def ablation_grid(base: TrainConfig, rows: Sequence[Dict], train_examples: Sequence[QAExample],
                  eval_examples: Sequence[QAExample], vocab: Vocabulary, seeds: Sequence[int] = (),
                  perturbations: Sequence[str] = (), comparisons: Sequence[Dict] = (), name: str = "grid",
                  dump_dir: Optional[str] = None,
                  on_run: Optional[Callable[[Dict], None]] = None) -> AblationResult:
    """One train + evaluate run per (row, seed)."""
    seeds = list(seeds) or [base.seed]
    labels = [row["label"] for row in rows]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"Duplicate row labels in grid '{name}': {labels}")
    try:
        perturbations = [PerturbationSpec(kind).kind for kind in perturbations]
    except ValueError as e:
        raise ConfigError(f"Grid '{name}': {e}; expected kinds from {PERTURBATION_KINDS}") from e
    result = AblationResult(name, seeds)

    for row in rows:
        row_result = RowResult(row["label"], dict(row.get("overrides", {})))
        for seed in seeds:
            cfg = base.with_overrides(**{**row_result.overrides, "seed": seed})
            logger.info("Ablation", f"[{name}] row '{row_result.label}' seed {seed}")
            model = Trainer(cfg, vocab).train(train_examples).model
            specs = [PerturbationSpec(kind, seed) for kind in perturbations]
            report, predictions = evaluate(model, eval_examples, specs, vocab, cfg,
                                           label=row_result.label, keep_predictions=True)
            run = {"seed": seed, "metrics": run_metrics(report), "report": report.to_dict()}
            if dump_dir:
                run["score_dump"] = write_score_dump(
                    os.path.join(dump_dir, f"scores_{name}_{row_result.label}_s{seed}.jsonl"),
                    predictions, variant=row_result.label)
            row_result.runs.append(run)
            if on_run is not None:
                on_run({"grid": name, "row": row_result.label, "seed": seed, "metrics": run["metrics"]})
        result.rows.append(row_result)
        logger.debug_at_level(DEBUG_L1, "Ablation", f"[{name}] '{row_result.label}' mean {row_result.mean()}")

    result.verdicts = [majority_verdict(result, c) for c in comparisons]
    for verdict in result.verdicts:
        logger.info("Ablation", f"{verdict['name']} ({verdict['metric']}): "
                                f"{'holds' if verdict['holds'] else 'does not hold'} {verdict['per_seed']}")
    return result


def run_preset(preset: Dict, base: TrainConfig, train_examples, eval_examples, vocab, n_seeds: int = 1,
               dump_dir: Optional[str] = None, on_run=None) -> AblationResult:
    seeds = [base.seed + k for k in range(max(1, n_seeds))]
    return ablation_grid(base, preset["rows"], train_examples, eval_examples, vocab, seeds,
                         preset.get("perturbations", ()), preset.get("comparisons", ()),
                         preset.get("name", "grid"), dump_dir, on_run)
