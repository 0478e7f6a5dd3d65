# Core/synth_tasks.py

"""
Synthetic table-QA generator.

Every example carries a structured TaskQuery. execute_query() is the single
interpreter of that query: it derives the answer, the gold cells and the
criteria cells from a table, so perturbed tables can be re-answered.
"""
import re
from bisect import bisect_left
from dataclasses import dataclass, field, asdict
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from Core.errors import ConfigError, QueryResolutionError
from Core.table import CellCoord, Table
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2

logger = get_logger()

# ─── Task kinds ───
LOOKUP = "lookup"
COUNT = "count"
ARGMAX_LOOKUP = "argmax-lookup"
COMPARISON = "comparison"
SUM = "sum"
TASK_KINDS = (LOOKUP, COUNT, ARGMAX_LOOKUP, COMPARISON, SUM)

RETRIEVAL_KINDS = frozenset({LOOKUP, ARGMAX_LOOKUP, COMPARISON})
MIN_ROWS = {LOOKUP: 1, COUNT: 1, SUM: 1, ARGMAX_LOOKUP: 2, COMPARISON: 2}
MIN_COLS = {LOOKUP: 2, COUNT: 2, SUM: 3, ARGMAX_LOOKUP: 2, COMPARISON: 2}

# ─── Size bins (cells counted with the header row) ───
SIZE_BIN_EDGES = (25, 50, 100, 200, 500)
SIZE_BIN_LABELS = ("<=25", "26-50", "51-100", "101-200", "201-500", ">500")

DATASET_SCHEMA = "tableqa-dataset"
DATASET_VERSION = 1

_NUMBER_RE = re.compile(r"^[+-]?\d+(\.\d+)?$")

# ─── Value pools ───
CITIES = ["boston", "denver", "austin", "miami", "seattle", "chicago", "dallas", "phoenix",
          "portland", "detroit", "atlanta", "houston", "tampa", "omaha", "tulsa", "reno",
          "fresno", "memphis", "raleigh", "newark"]
MASCOTS = ["eagles", "lions", "bears", "hawks", "wolves", "tigers", "sharks", "rams",
           "bulls", "owls", "foxes", "giants"]
FIRST_NAMES = ["anna", "boris", "carla", "dmitri", "elena", "felix", "greta", "hugo",
               "ines", "jonas", "karin", "lars", "mila", "nils", "olga", "pavel",
               "rosa", "sven", "tomas", "vera"]
LAST_NAMES = ["berg", "novak", "lund", "weber", "costa", "holm", "kral", "moreau",
              "dahl", "ortiz", "sato", "varga", "quinn", "petrov", "silva", "brandt",
              "falk", "ivanov", "janssen", "keller"]
ADJECTIVES = ["silent", "golden", "hidden", "broken", "distant", "crimson", "frozen", "lonely",
              "bright", "hollow", "wild", "quiet", "lost", "rising", "final"]
NOUNS = ["harbor", "forest", "signal", "garden", "bridge", "river", "tower", "island"]
PARTY_WORDS = ["green", "labor", "liberal", "national", "unity", "reform", "people", "pirate",
               "farmers", "progress", "civic", "freedom", "workers", "citizens", "heritage"]
PARTY_NOUNS = ["party", "alliance", "league", "front", "union", "movement", "bloc", "list"]


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str                       # key | category | number | score
    pool: Tuple[str, ...] = ()
    low: int = 0
    high: int = 0


def _combine(left, right):
    return tuple(f"{a} {b}" for a in left for b in right)


SCHEMAS: Dict[str, Tuple[ColumnSpec, ...]] = {
    "season": (
        ColumnSpec("opponent", "key", _combine(CITIES, MASCOTS)),
        ColumnSpec("result", "category", ("win", "loss", "draw")),
        ColumnSpec("score", "score", low=0, high=49),
        ColumnSpec("tv", "category", ("cbs", "nbc", "fox", "espn", "abc")),
        ColumnSpec("week", "number", low=1, high=20),
        ColumnSpec("points", "number", low=0, high=40),
    ),
    "election": (
        ColumnSpec("party", "key", _combine(PARTY_WORDS, PARTY_NOUNS)),
        ColumnSpec("region", "category", ("north", "south", "east", "west", "central")),
        ColumnSpec("seats", "number", low=0, high=60),
        ColumnSpec("status", "category", ("elected", "defeated", "withdrawn")),
        ColumnSpec("votes", "number", low=1, high=99),
        ColumnSpec("term", "category", ("1995/96", "1996/97", "1997/98", "1998/99")),
    ),
    "episodes": (
        ColumnSpec("title", "key", tuple(f"the {t}" for t in _combine(ADJECTIVES, NOUNS))),
        ColumnSpec("network", "category", ("cbs", "nbc", "fox", "abc")),
        ColumnSpec("rank", "number", low=1, high=30),
        ColumnSpec("viewers", "number", low=1, high=25),
        ColumnSpec("night", "category", ("monday", "tuesday", "friday", "sunday")),
        ColumnSpec("rating", "score", low=1, high=9),
    ),
    "athletes": (
        ColumnSpec("name", "key", _combine(FIRST_NAMES, LAST_NAMES)),
        ColumnSpec("nation", "category", ("sweden", "norway", "brazil", "japan", "kenya", "chile")),
        ColumnSpec("caps", "number", low=0, high=40),
        ColumnSpec("position", "category", ("forward", "defender", "midfielder", "goalkeeper")),
        ColumnSpec("goals", "number", low=0, high=30),
        ColumnSpec("club", "category", ("rovers", "united", "city", "athletic", "wanderers")),
    ),
}
SCHEMA_WIDTH = min(len(cols) for cols in SCHEMAS.values())


def key_pool_size(schema_name: str) -> int:
    return len(SCHEMAS[schema_name][0].pool)


# ─── Data types ───

@dataclass(frozen=True)
class TaskQuery:
    """
    kind            one of TASK_KINDS
    criteria_column column whose values select rows (the numeric column for argmax-lookup)
    values          criteria values (empty for argmax-lookup, two for comparison)
    target_column   column read / added up / compared; None for count
    """
    kind: str
    criteria_column: str
    values: Tuple[str, ...] = ()
    target_column: Optional[str] = None

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "criteria_column": self.criteria_column,
                "values": list(self.values), "target_column": self.target_column}

    @classmethod
    def from_dict(cls, data: Dict) -> "TaskQuery":
        return cls(data["kind"], data["criteria_column"], tuple(data.get("values", ())),
                   data.get("target_column"))


@dataclass(frozen=True)
class QueryResult:
    answer: str
    gold_cells: FrozenSet[CellCoord]
    criteria_cells: FrozenSet[CellCoord]


@dataclass
class QAExample:
    example_id: str
    table: Table
    question: str
    answer: str
    gold_cells: FrozenSet[CellCoord]
    parsing_statement: str
    answer_type: Tuple[str, str]
    task_kind: str
    query: TaskQuery
    schema: str = ""

    def to_dict(self) -> Dict:
        return {
            "example_id": self.example_id,
            "schema": self.schema,
            "table": self.table.to_dict(),
            "question": self.question,
            "answer": self.answer,
            "gold_cells": [list(c) for c in sorted(self.gold_cells)],
            "parsing_statement": self.parsing_statement,
            "answer_type": list(self.answer_type),
            "task_kind": self.task_kind,
            "query": self.query.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "QAExample":
        return cls(
            example_id=str(data["example_id"]),
            table=Table.from_dict(data["table"]),
            question=data["question"],
            answer=data["answer"],
            gold_cells=frozenset(CellCoord(int(r), int(c)) for r, c in data["gold_cells"]),
            parsing_statement=data["parsing_statement"],
            answer_type=tuple(data["answer_type"]),
            task_kind=data["task_kind"],
            query=TaskQuery.from_dict(data["query"]),
            schema=data.get("schema", ""),
        )


@dataclass
class GeneratorConfig:
    row_range: Tuple[int, int] = (2, 30)
    col_range: Tuple[int, int] = (3, 5)
    schemas: Tuple[str, ...] = tuple(SCHEMAS)
    distractor_fraction: float = 0.6
    task_weights: Dict[str, float] = field(default_factory=lambda: {
        LOOKUP: 0.3, COUNT: 0.2, ARGMAX_LOOKUP: 0.2, COMPARISON: 0.15, SUM: 0.15})
    seed: int = 7

    def validate(self):
        lo, hi = self.row_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"Invalid row_range {self.row_range}")
        clo, chi = self.col_range
        if clo < 2 or chi < clo or chi > SCHEMA_WIDTH:
            raise ConfigError(f"Invalid col_range {self.col_range} (columns must lie in [2, {SCHEMA_WIDTH}])")
        unknown = [s for s in self.schemas if s not in SCHEMAS]
        if not self.schemas or unknown:
            raise ConfigError(f"Unknown or empty schemas: {unknown or self.schemas}")
        if not 0.0 <= self.distractor_fraction < 1.0:
            raise ConfigError(f"distractor_fraction must lie in [0, 1): {self.distractor_fraction}")
        bad_kinds = [k for k in self.task_weights if k not in TASK_KINDS]
        if bad_kinds:
            raise ConfigError(f"Unknown task kinds: {bad_kinds}")
        weights = list(self.task_weights.values())
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError(f"Task mixture weights must be non-negative and sum to 1: {self.task_weights}")
        for kind, weight in self.task_weights.items():
            if weight <= 0:
                continue
            if hi < MIN_ROWS[kind]:
                raise ConfigError(f"Task '{kind}' needs at least {MIN_ROWS[kind]} rows; row_range is {self.row_range}")
            if chi < MIN_COLS[kind]:
                raise ConfigError(f"Task '{kind}' needs at least {MIN_COLS[kind]} columns; col_range is {self.col_range}")
        # keys are unique per table, so a table never has more rows than its schema's key pool
        pools = {name: key_pool_size(name) for name in self.schemas}
        smallest = min(pools, key=pools.get)
        if lo > pools[smallest]:
            raise ConfigError(f"row_range {self.row_range} starts above the '{smallest}' key pool ({pools[smallest]})")
        if hi > max(pools.values()):
            raise ConfigError(f"row_range {self.row_range} exceeds every key pool (largest {max(pools.values())})")
        if hi > pools[smallest]:
            logger.debug_at_level(DEBUG_L1, "SynthTasks", f"Row counts capped per schema at its key pool: {pools}")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["row_range"] = list(self.row_range)
        data["col_range"] = list(self.col_range)
        data["schemas"] = list(self.schemas)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "GeneratorConfig":
        defaults = cls()
        return cls(
            row_range=tuple(data.get("row_range", defaults.row_range)),
            col_range=tuple(data.get("col_range", defaults.col_range)),
            schemas=tuple(data.get("schemas", defaults.schemas)),
            distractor_fraction=float(data.get("distractor_fraction", defaults.distractor_fraction)),
            task_weights=dict(data.get("task_weights", defaults.task_weights)),
            seed=int(data.get("seed", defaults.seed)),
        )


# ─── Small helpers ───

def size_bin(table: Table) -> int:
    """Bin index in [0, 5] by cell count; a bin's upper edge is inclusive."""
    return bisect_left(SIZE_BIN_EDGES, table.cell_count)


def is_numeric(text: str) -> bool:
    return bool(_NUMBER_RE.match(text.strip()))


def answer_type_of(kind: str, answer: str) -> Tuple[str, str]:
    return ("numeric" if is_numeric(answer) else "non-numeric",
            "retrieval" if kind in RETRIEVAL_KINDS else "aggregation")


def _format_number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else f"{value:g}"


def _numeric_column(table: Table, j: int) -> List[float]:
    values = []
    for i, row in enumerate(table.rows, start=1):
        if not is_numeric(row[j]):
            raise QueryResolutionError(f"Cell ({i}, {j}) is not numeric: {row[j]!r}")
        values.append(float(row[j]))
    return values


def _column(table: Table, name: str) -> int:
    try:
        return table.column_index(name)
    except KeyError:
        raise QueryResolutionError(f"Column '{name}' not in table") from None


# ─── Interpreter ───

def execute_query(table: Table, query: TaskQuery) -> QueryResult:
    """Derive answer, gold cells and criteria cells; raises QueryResolutionError."""
    c = _column(table, query.criteria_column)
    t = _column(table, query.target_column) if query.target_column else None

    if query.kind in (LOOKUP, COUNT, SUM):
        value = query.values[0]
        matches = [i for i, row in enumerate(table.rows, start=1) if row[c] == value]
        if not matches:
            raise QueryResolutionError(f"No row has {query.criteria_column} = {value!r}")
        criteria = frozenset(CellCoord(i, c) for i in matches)
        if query.kind == LOOKUP:
            if len(matches) != 1:
                raise QueryResolutionError(f"Lookup key {value!r} is not unique")
            gold = frozenset({CellCoord(matches[0], t)})
            return QueryResult(table.rows[matches[0] - 1][t], gold, criteria)
        if query.kind == COUNT:
            return QueryResult(str(len(matches)), criteria, criteria)
        total = 0.0
        for i in matches:
            cell = table.rows[i - 1][t]
            if not is_numeric(cell):
                raise QueryResolutionError(f"Cell ({i}, {t}) is not numeric: {cell!r}")
            total += float(cell)
        return QueryResult(_format_number(total), frozenset(CellCoord(i, t) for i in matches), criteria)

    if query.kind == ARGMAX_LOOKUP:
        numbers = _numeric_column(table, c)
        best = max(numbers)
        winners = [i for i, v in enumerate(numbers, start=1) if v == best]
        if len(winners) != 1:
            raise QueryResolutionError("Maximum is not unique")
        row = winners[0]
        gold = frozenset([CellCoord(i, c) for i in range(1, table.n_rows + 1)] + [CellCoord(row, t)])
        return QueryResult(table.rows[row - 1][t], gold, frozenset({CellCoord(row, c)}))

    if query.kind == COMPARISON:
        picked = []
        for value in query.values:
            rows = [i for i, r in enumerate(table.rows, start=1) if r[c] == value]
            if len(rows) != 1:
                raise QueryResolutionError(f"Comparison value {value!r} matches {len(rows)} rows")
            cell = table.rows[rows[0] - 1][t]
            if not is_numeric(cell):
                raise QueryResolutionError(f"Cell ({rows[0]}, {t}) is not numeric: {cell!r}")
            picked.append((float(cell), rows[0], value))
        if picked[0][0] == picked[1][0]:
            raise QueryResolutionError("Compared values are equal")
        winner = max(picked)[2]
        gold = frozenset(CellCoord(row, col) for _, row, _ in picked for col in (c, t))
        criteria = frozenset(CellCoord(row, c) for _, row, _ in picked)
        return QueryResult(winner, gold, criteria)

    raise QueryResolutionError(f"Unknown task kind {query.kind!r}")


def answer_from_gold(example: QAExample) -> str:
    """
    Recompute the answer from the gold cells alone (independent of execute_query).
    """
    table, query, gold = example.table, example.query, example.gold_cells
    if example.task_kind == LOOKUP:
        (cell,) = tuple(gold)
        return table.cell(cell)
    if example.task_kind == COUNT:
        return str(len(gold))
    if example.task_kind == SUM:
        return _format_number(sum(float(table.cell(cell)) for cell in gold))
    if example.task_kind == ARGMAX_LOOKUP:
        c = table.column_index(query.criteria_column)
        t = table.column_index(query.target_column)
        numbers = [(float(table.cell(cell)), cell.row) for cell in gold if cell.col == c]
        best_row = max(numbers)[1]
        return table.cell(CellCoord(best_row, t))
    if example.task_kind == COMPARISON:
        c = table.column_index(query.criteria_column)
        t = table.column_index(query.target_column)
        rows = sorted({cell.row for cell in gold})
        best_row = max(rows, key=lambda r: float(table.cell(CellCoord(r, t))))
        return table.cell(CellCoord(best_row, c))
    raise ValueError(f"Unknown task kind {example.task_kind!r}")


# ─── Parsing statements and questions ───

def make_parsing_statement(example: QAExample) -> str:
    return statement_for_query(example.query)


def statement_for_query(query: TaskQuery) -> str:
    prefix = "to find the answer, look at the column"
    if query.kind == LOOKUP:
        return (f"{prefix} {query.criteria_column} and rows with value {query.values[0]}, "
                f"then read the column {query.target_column}")
    if query.kind == COUNT:
        return f"{prefix} {query.criteria_column} and count rows with value {query.values[0]}"
    if query.kind == SUM:
        return (f"{prefix} {query.criteria_column} and rows with value {query.values[0]}, "
                f"then add up the column {query.target_column}")
    if query.kind == ARGMAX_LOOKUP:
        return (f"{prefix} {query.criteria_column} and find the row with the highest value, "
                f"then read the column {query.target_column}")
    if query.kind == COMPARISON:
        return (f"{prefix} {query.criteria_column} and rows with value {query.values[0]} or {query.values[1]}, "
                f"then compare the column {query.target_column}")
    raise ValueError(f"Unknown task kind {query.kind!r}")


def question_for_query(query: TaskQuery) -> str:
    if query.kind == LOOKUP:
        return f"what is the {query.target_column} when the {query.criteria_column} is {query.values[0]}?"
    if query.kind == COUNT:
        return f"how many rows have {query.criteria_column} {query.values[0]}?"
    if query.kind == SUM:
        return f"what is the total {query.target_column} when the {query.criteria_column} is {query.values[0]}?"
    if query.kind == ARGMAX_LOOKUP:
        return f"which {query.target_column} has the highest {query.criteria_column}?"
    if query.kind == COMPARISON:
        return (f"which {query.criteria_column} has a higher {query.target_column}, "
                f"{query.values[0]} or {query.values[1]}?")
    raise ValueError(f"Unknown task kind {query.kind!r}")


# ─── Generation ───

class _ExampleBuilder:
    """Builds one example from a per-index random generator."""

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng

    def choice(self, items):
        return items[int(self.rng.integers(len(items)))]

    def pick_shape(self, kind: str, max_rows: int) -> Tuple[int, int]:
        clo, chi = self.cfg.col_range
        n_cols = int(self.rng.integers(max(clo, MIN_COLS[kind]), chi + 1))
        rlo, rhi = self.cfg.row_range
        rows_by_bin: Dict[int, List[int]] = {}
        for n in range(max(rlo, MIN_ROWS[kind]), min(rhi, max_rows) + 1):
            rows_by_bin.setdefault(bisect_left(SIZE_BIN_EDGES, (n + 1) * n_cols), []).append(n)
        bins = sorted(rows_by_bin)
        return self.choice(rows_by_bin[self.choice(bins)]), n_cols

    def pick_columns(self, schema: Sequence[ColumnSpec], kind: str, n_cols: int):
        key = schema[0]
        categories = [c for c in schema[1:] if c.kind == "category"]
        numbers = [c for c in schema[1:] if c.kind == "number"]
        required: List[ColumnSpec] = [key]
        roles: Dict[str, ColumnSpec] = {"key": key}
        if kind in (COUNT, SUM):
            roles["category"] = self.choice(categories)
            required.append(roles["category"])
        if kind in (SUM, ARGMAX_LOOKUP, COMPARISON):
            roles["number"] = self.choice(numbers)
            required.append(roles["number"])
        if kind == LOOKUP:
            roles["target"] = self.choice(list(schema[1:]))
            required.append(roles["target"])
        rest = [c for c in schema if c not in required]
        order = self.rng.permutation(len(rest))
        chosen = set(c.name for c in required) | set(rest[k].name for k in order[:max(0, n_cols - len(required))])
        return [c for c in schema if c.name in chosen], roles

    def fill_value(self, spec: ColumnSpec) -> str:
        if spec.kind == "number":
            return str(int(self.rng.integers(spec.low, spec.high + 1)))
        if spec.kind == "score":
            a, b = self.rng.integers(spec.low, spec.high + 1, size=2)
            return f"{int(a)}-{int(b)}"
        return self.choice(spec.pool)

    def build(self, index: int, schema_name: str, kind: str) -> QAExample:
        schema = SCHEMAS[schema_name]
        n_rows, n_cols = self.pick_shape(kind, key_pool_size(schema_name))
        columns, roles = self.pick_columns(schema, kind, n_cols)
        names = [c.name for c in columns]

        keys = self.rng.choice(len(columns[0].pool), size=n_rows, replace=False)
        grid = [[columns[0].pool[int(k)]] + [self.fill_value(c) for c in columns[1:]] for k in keys]
        query = self.make_query(kind, grid, names, roles)

        table = Table(names, grid)
        result = execute_query(table, query)
        return QAExample(
            example_id=f"{self.cfg.seed}-{index:06d}",
            table=table,
            question=question_for_query(query),
            answer=result.answer,
            gold_cells=result.gold_cells,
            parsing_statement=statement_for_query(query),
            answer_type=answer_type_of(kind, result.answer),
            task_kind=kind,
            query=query,
            schema=schema_name,
        )

    def make_query(self, kind, grid, names, roles) -> TaskQuery:
        n_rows = len(grid)
        key_j = names.index(roles["key"].name)

        if kind == LOOKUP:
            row = int(self.rng.integers(n_rows))
            return TaskQuery(LOOKUP, roles["key"].name, (grid[row][key_j],), roles["target"].name)

        if kind in (COUNT, SUM):
            spec = roles["category"]
            j = names.index(spec.name)
            value = self.choice(spec.pool)
            others = [v for v in spec.pool if v != value]
            for row in grid:
                row[j] = value if self.rng.random() >= self.cfg.distractor_fraction else self.choice(others)
            if not any(row[j] == value for row in grid):
                grid[int(self.rng.integers(n_rows))][j] = value
            target = roles["number"].name if kind == SUM else None
            return TaskQuery(kind, spec.name, (value,), target)

        num_j = names.index(roles["number"].name)
        if kind == ARGMAX_LOOKUP:
            # enforce a unique maximum
            top = int(self.rng.integers(n_rows))
            peak = max(int(row[num_j]) for row in grid) + 1
            grid[top][num_j] = str(peak)
            return TaskQuery(ARGMAX_LOOKUP, roles["number"].name, (), roles["key"].name)

        a, b = (int(x) for x in self.rng.choice(n_rows, size=2, replace=False))
        if grid[a][num_j] == grid[b][num_j]:
            grid[b][num_j] = str(int(grid[b][num_j]) + 1)
        return TaskQuery(COMPARISON, roles["key"].name, (grid[a][key_j], grid[b][key_j]), roles["number"].name)


def generate_example(cfg: GeneratorConfig, index: int) -> QAExample:
    """Example `index` of the dataset defined by cfg; depends only on (cfg, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    kinds = [k for k in TASK_KINDS if cfg.task_weights.get(k, 0.0) > 0]
    probs = np.array([cfg.task_weights[k] for k in kinds], dtype=float)
    kind = kinds[int(rng.choice(len(kinds), p=probs / probs.sum()))]
    schema_name = cfg.schemas[int(rng.integers(len(cfg.schemas)))]
    return _ExampleBuilder(cfg, rng).build(index, schema_name, kind)


def generate_dataset(cfg: GeneratorConfig, n: int, start: int = 0) -> List[QAExample]:
    """
    Generate examples start..start+n-1. Shards generated with different `start`
    values concatenate to the same dataset as a single call.
    """
    if n < 1:
        raise ConfigError(f"Number of examples must be >= 1, got {n}")
    cfg.validate()
    examples = [generate_example(cfg, i) for i in range(start, start + n)]
    bins = sorted({size_bin(ex.table) for ex in examples})
    logger.debug_at_level(DEBUG_L1, "SynthTasks", f"Generated {n} examples (seed={cfg.seed}), size bins {bins}")
    logger.debug_at_level(DEBUG_L2, "SynthTasks",
                          f"Task mix: { {k: sum(ex.task_kind == k for ex in examples) for k in TASK_KINDS} }")
    return examples
