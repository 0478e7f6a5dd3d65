# Managers/evaluation_manager.py

"""
Exact-match evaluation, the per-bin / per-answer-type breakdown, relevance
diagnostics and score dumps. Evaluation always runs in eval mode (s = 0).
"""
from collections import defaultdict
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from Core.event_manager import EventManager, EVAL_COMPLETE
from Core.model import RelevanceGatedQA, collate
from Core.perturbations import PerturbationSpec, relative_drop
from Core.synth_tasks import SIZE_BIN_LABELS, QAExample, size_bin
from Core.vocabulary import Vocabulary
from Managers.dataset_manager import perturb_dataset
from Managers.training_manager import load_checkpoint, prepare_examples, torch_dtype
from Utils.config_utils import TrainConfig
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2
from Utils.save_utils import write_jsonl

logger = get_logger()

REPORT_SCHEMA = "tableqa-eval-report"
SCORE_DUMP_SCHEMA = "tableqa-score-dump"
REPORT_VERSION = 1
HISTOGRAM_BUCKETS = 20
MIDDLE_BAND = (0.4, 0.6)


def normalize_answer(text: str) -> str:
    return " ".join(text.split()).lower()


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


@dataclass
class Prediction:
    example_id: str
    prediction: str
    answer: str
    correct: int
    size_bin: int
    answer_type: tuple
    eta_uns: np.ndarray
    eta_cell: np.ndarray
    eta: np.ndarray
    gold_mask: np.ndarray
    cell_mask: np.ndarray
    latents: Optional[np.ndarray] = None
    cells: Optional[Dict] = None


def predict(model: RelevanceGatedQA, vocab: Vocabulary, cfg: TrainConfig, examples: Sequence[QAExample],
            batch_size: Optional[int] = None, keep_latents: bool = False) -> List[Prediction]:
    prepared = prepare_examples(examples, vocab, cfg)
    dtype = torch_dtype(cfg)
    batch_size = batch_size or cfg.batch_size
    out = []
    for k in range(0, len(prepared), batch_size):
        chunk = prepared[k:k + batch_size]
        batch = collate(chunk, vocab, dtype)
        answers, eta_uns, eta, h = model.generate(
            batch, cfg.max_answer_len, vocab.boa_id, vocab.eoa_id, cfg.beam_size,
            cfg.lambda_uns, cfg.lambda_cell, cfg.relevance_source)
        for b, item in enumerate(chunk):
            start, end = item.encoded.table_span
            text = vocab.decode(answers[b])
            ex = item.example
            out.append(Prediction(
                example_id=ex.example_id,
                prediction=text,
                answer=ex.answer,
                correct=exact_match(text, ex.answer),
                size_bin=size_bin(ex.table),
                answer_type=tuple(ex.answer_type),
                eta_uns=eta_uns[b, start:end].double().cpu().numpy(),
                eta_cell=np.asarray(item.eta_cell, dtype=float),
                eta=eta[b, start:end].double().cpu().numpy(),
                gold_mask=item.gold_mask,
                cell_mask=item.cell_mask,
                latents=h[b, start:end].double().cpu().numpy() if keep_latents else None,
                cells=item.encoded.linearized.summary(),
            ))
            logger.debug_at_level(DEBUG_L2, "Evaluator", f"{ex.example_id}: pred={text!r} gold={ex.answer!r}")
    return out


def accuracy(predictions: Sequence[Prediction]) -> float:
    if not predictions:
        return 0.0
    return 100.0 * sum(p.correct for p in predictions) / len(predictions)


def accuracy_on(model, vocab, cfg, examples) -> float:
    return accuracy(predict(model, vocab, cfg, examples))


def relevance_diagnostics(predictions: Sequence[Prediction]) -> Dict:
    """
    Mean fused / unsupervised scores on gold vs non-gold cell tokens, the
    20-bucket eta_uns histogram over all table tokens, and the share of eta_uns
    in [0.4, 0.6].
    """
    if not predictions:
        return {}
    eta = np.concatenate([p.eta for p in predictions])
    eta_uns = np.concatenate([p.eta_uns for p in predictions])
    gold = np.concatenate([p.gold_mask for p in predictions]).astype(bool)
    cells = np.concatenate([p.cell_mask for p in predictions]).astype(bool)
    non_gold = cells & ~gold

    def mean(values, mask):
        return float(values[mask].mean()) if mask.any() else None

    counts, _ = np.histogram(eta_uns, bins=HISTOGRAM_BUCKETS, range=(0.0, 1.0))
    lo, hi = MIDDLE_BAND
    return {
        "mean_eta_gold": mean(eta, gold),
        "mean_eta_non_gold": mean(eta, non_gold),
        "mean_eta_uns_gold": mean(eta_uns, gold),
        "mean_eta_uns_non_gold": mean(eta_uns, non_gold),
        "histogram": counts.tolist(),
        "middle_fraction": float(((eta_uns >= lo) & (eta_uns <= hi)).mean()),
        "n_table_tokens": int(eta_uns.size),
    }


@dataclass
class EvalReport:
    label: str
    n_examples: int
    accuracy: float
    per_size_bin: Dict[str, Dict] = field(default_factory=dict)
    per_answer_type: Dict[str, Dict] = field(default_factory=dict)
    relevance: Dict = field(default_factory=dict)
    perturbations: Dict[str, Dict] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, **asdict(self)}


def _grouped_accuracy(predictions: Sequence[Prediction], key) -> Dict[str, Dict]:
    groups = defaultdict(list)
    for p in predictions:
        for name in key(p):
            groups[name].append(p)
    return {name: {"n": len(group), "accuracy": accuracy(group)} for name, group in sorted(groups.items())}


def build_report(label: str, predictions: Sequence[Prediction]) -> EvalReport:
    return EvalReport(
        label=label,
        n_examples=len(predictions),
        accuracy=accuracy(predictions),
        per_size_bin=_grouped_accuracy(predictions, lambda p: [SIZE_BIN_LABELS[p.size_bin]]),
        per_answer_type=_grouped_accuracy(predictions, lambda p: list(p.answer_type)),
        relevance=relevance_diagnostics(predictions),
    )


def evaluate(model: Union[str, RelevanceGatedQA], examples: Sequence[QAExample],
             perturbations: Sequence[PerturbationSpec] = (), vocab: Optional[Vocabulary] = None,
             cfg: Optional[TrainConfig] = None, label: str = "clean",
             keep_predictions: bool = False):
    """
    Evaluate a model (or checkpoint path) on clean examples and on each
    perturbed copy. Returns the EvalReport, plus the clean predictions when
    keep_predictions is set.
    """
    if isinstance(model, str):
        model, vocab, stored_cfg, _ = load_checkpoint(model, vocab)
        cfg = cfg or stored_cfg
    if vocab is None or cfg is None:
        raise ValueError("vocab and cfg are required when passing a model object")
    model.eval()

    clean = predict(model, vocab, cfg, examples, keep_latents=keep_predictions)
    report = build_report(label, clean)
    for spec in perturbations:
        perturbed = perturb_dataset(examples, spec)
        score = accuracy(predict(model, vocab, cfg, perturbed))
        drop = relative_drop(report.accuracy, score)
        report.perturbations[spec.name] = {"accuracy": score, "relative_drop": drop, "seed": spec.seed}
        logger.info("Evaluator", f"{spec.name}: accuracy {score:.2f} "
                                 f"(drop {'N/A' if drop is None else f'{drop:.2f}%'})")

    logger.info("Evaluator", f"[{label}] exact match {report.accuracy:.2f} on {report.n_examples} examples")
    logger.debug_at_level(DEBUG_L1, "Evaluator", f"Relevance diagnostics: {report.relevance}")
    EventManager.get_instance().publish(EVAL_COMPLETE, {"label": label, "report": report.to_dict()})
    return (report, clean) if keep_predictions else report


# ─── Score dumps ───

def score_dump_records(predictions: Sequence[Prediction], variant: str = "") -> List[Dict]:
    records = []
    for p in predictions:
        record = {
            "example_id": p.example_id,
            "variant": variant,
            "eta_uns": [round(float(v), 6) for v in p.eta_uns],
            "eta_cell": [float(v) for v in p.eta_cell],
            "eta": [round(float(v), 6) for v in p.eta],
            "gold": [bool(v) for v in p.gold_mask],
            "token_cell_map": p.cells,
        }
        if p.latents is not None:
            record["latents"] = np.round(p.latents, 6).tolist()
        records.append(record)
    return records


def write_score_dump(path: str, predictions: Sequence[Prediction], variant: str = "") -> str:
    header = {"schema": SCORE_DUMP_SCHEMA, "version": REPORT_VERSION, "variant": variant}
    write_jsonl(path, score_dump_records(predictions, variant), header=header)
    return path
