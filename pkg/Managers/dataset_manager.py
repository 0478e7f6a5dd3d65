# Managers/dataset_manager.py

"""
Dataset files and the pieces built from them: JSON-lines QA datasets,
the vocabulary, donor pools and perturbed copies of a dataset.
"""
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from Core.errors import TableQAError
from Core.perturbations import PerturbationSpec, perturb_example
from Core.synth_tasks import (
    DATASET_SCHEMA, DATASET_VERSION, SCHEMAS, TASK_KINDS, GeneratorConfig, QAExample, TaskQuery,
    generate_dataset, question_for_query, statement_for_query,
)
from Core.table import Table, flatten_table
from Core.vocabulary import Vocabulary, tokenize_text
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2
from Utils.save_utils import read_jsonl, write_jsonl

logger = get_logger()

MAX_NUMBER_TOKEN = 2000


# ─── Vocabulary ───

def _template_texts() -> Iterable[str]:
    for kind in TASK_KINDS:
        query = TaskQuery(kind, "x", ("x", "x"), "x")
        yield question_for_query(query)
        yield statement_for_query(query)


def vocabulary_texts(examples: Sequence[QAExample] = ()) -> Iterable[str]:
    """Every string the generator can emit, then the given examples."""
    yield from _template_texts()
    for columns in SCHEMAS.values():
        for spec in columns:
            yield spec.name
            yield from spec.pool
    yield " ".join(str(n) for n in range(MAX_NUMBER_TOKEN + 1))
    for ex in examples:
        yield ex.question
        yield ex.parsing_statement
        yield ex.answer
        yield flatten_table(ex.table)


def build_vocabulary(examples: Sequence[QAExample] = ()) -> Vocabulary:
    vocab = Vocabulary.build(vocabulary_texts(examples))
    logger.debug_at_level(DEBUG_L1, "DatasetManager", f"Vocabulary size {len(vocab)}")
    return vocab


def unseen_tokens(examples: Sequence[QAExample], vocab: Vocabulary) -> List[str]:
    """Tokens of the examples that the vocabulary maps to <unk>."""
    texts = vocabulary_texts(examples)
    return sorted({tok for text in texts for tok in tokenize_text(text) if tok not in vocab})


# ─── Dataset files ───

def dataset_header(cfg: Optional[GeneratorConfig], n: int, start: int = 0, **extra) -> Dict:
    header = {"schema": DATASET_SCHEMA, "version": DATASET_VERSION, "n": n, "start": start}
    if cfg is not None:
        header["generator"] = cfg.to_dict()
    header.update(extra)
    return header


def save_dataset(path: str, examples: Sequence[QAExample], cfg: Optional[GeneratorConfig] = None,
                 start: int = 0, **extra) -> str:
    write_jsonl(path, (ex.to_dict() for ex in examples), header=dataset_header(cfg, len(examples), start, **extra))
    logger.info("DatasetManager", f"Saved {len(examples)} examples to {path}")
    return path


def load_dataset(path: str) -> Tuple[Dict, List[QAExample]]:
    header, records = read_jsonl(path, schema=DATASET_SCHEMA)
    if header.get("version") != DATASET_VERSION:
        raise TableQAError(f"{path}: unsupported dataset version {header.get('version')}")
    try:
        examples = [QAExample.from_dict(r) for r in records]
    except (KeyError, TypeError, ValueError) as e:
        raise TableQAError(f"{path}: malformed example record: {e}") from e
    if not examples:
        raise TableQAError(f"{path}: dataset is empty")
    logger.debug_at_level(DEBUG_L2, "DatasetManager", f"Loaded {len(examples)} examples from {path}")
    return header, examples


def generate_split(cfg: GeneratorConfig, n: int, holdout: int = 0) -> Tuple[List[QAExample], List[QAExample]]:
    """Train examples are indices [0, n); held-out examples continue at n."""
    train = generate_dataset(cfg, n)
    held_out = generate_dataset(cfg, holdout, start=n) if holdout > 0 else []
    return train, held_out


# ─── Donors and perturbations ───

def donor_tables(examples: Sequence[QAExample]) -> List[Table]:
    seen, tables = set(), []
    for ex in examples:
        key = (ex.table.header, ex.table.rows)
        if key not in seen:
            seen.add(key)
            tables.append(ex.table)
    return tables


def perturb_dataset(examples: Sequence[QAExample], spec: PerturbationSpec) -> List[QAExample]:
    """Apply spec to every example; the per-example seed derives from (spec.seed, index)."""
    if not spec.donors and spec.kind in ("ra", "cr"):
        spec = PerturbationSpec(spec.kind, spec.seed, tuple(donor_tables(examples)), spec.literal_cr)
    perturbed = [perturb_example(ex, spec, i) for i, ex in enumerate(examples)]
    changed = sum(p.answer != ex.answer for p, ex in zip(perturbed, examples))
    logger.debug_at_level(DEBUG_L1, "DatasetManager",
                          f"{spec.name}: perturbed {len(perturbed)} examples, {changed} answers re-derived to new values")
    return perturbed
