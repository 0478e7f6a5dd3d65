# Core/perturbations.py

"""
Test-time table perturbations: row addition (RA), row permutation (RP),
column permutation (CP) and cell replacement (CR). Magnitudes for RA and CR
depend on the table's cell count m (header included):

    m <= 150        RA 1 row    CR 2% of cells
    150 < m <= 300  RA 2 rows   CR 5%
    300 < m <= 450  RA 5 rows   CR 10%
    m > 450         RA 8 rows   CR 12%

CR replaces max(1, round(f * m)) cells; in literal mode f is read as a
percentage (f / 100) and there is no floor of one.
"""
import math
from dataclasses import dataclass, field, replace
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from Core.errors import PerturbationError, QueryResolutionError
from Core.synth_tasks import QAExample, answer_type_of, execute_query
from Core.table import CellCoord, Table
from Utils.log_utils import get_logger, DEBUG_L2

logger = get_logger()

ROW_ADDITION = "ra"
ROW_PERMUTATION = "rp"
COLUMN_PERMUTATION = "cp"
CELL_REPLACEMENT = "cr"
PERTURBATION_KINDS = (ROW_ADDITION, ROW_PERMUTATION, COLUMN_PERMUTATION, CELL_REPLACEMENT)
KIND_NAMES = {
    ROW_ADDITION: "RowAddition",
    ROW_PERMUTATION: "RowPermutation",
    COLUMN_PERMUTATION: "ColumnPermutation",
    CELL_REPLACEMENT: "CellReplacement",
}

BUCKET_EDGES = (150, 300, 450)
ROWS_ADDED = (1, 2, 5, 8)
REPLACE_FRACTIONS = (0.02, 0.05, 0.10, 0.12)


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    seed: int = 0
    donors: Tuple[Table, ...] = ()
    literal_cr: bool = False

    def __post_init__(self):
        kind = self.kind.lower()
        for short, name in KIND_NAMES.items():
            if kind == name.lower():
                kind = short
        if kind not in PERTURBATION_KINDS:
            raise ValueError(f"Unknown perturbation kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "donors", tuple(self.donors))

    @property
    def name(self) -> str:
        return KIND_NAMES[self.kind]


@dataclass
class PerturbationResult:
    """
    row_map[i - 1] is the new 1-based row of original data row i.
    col_map[j] is the new column of original column j.
    """
    table: Table
    row_map: List[int]
    col_map: List[int]
    replaced: FrozenSet[CellCoord] = field(default_factory=frozenset)
    added_rows: Tuple[int, ...] = ()

    def remap(self, coord: CellCoord) -> CellCoord:
        row = 0 if coord.row == 0 else self.row_map[coord.row - 1]
        return CellCoord(row, self.col_map[coord.col])


# ─── Magnitudes ───

def magnitude_bucket(cell_count: int) -> int:
    for k, edge in enumerate(BUCKET_EDGES):
        if cell_count <= edge:
            return k
    return len(BUCKET_EDGES)


def rows_to_add(cell_count: int) -> int:
    return ROWS_ADDED[magnitude_bucket(cell_count)]


def cells_to_replace(cell_count: int, literal: bool = False) -> int:
    fraction = REPLACE_FRACTIONS[magnitude_bucket(cell_count)]
    if literal:
        return int(math.floor(fraction / 100.0 * cell_count + 0.5))
    return max(1, int(math.floor(fraction * cell_count + 0.5)))


def _identity(table: Table):
    return list(range(1, table.n_rows + 1)), list(range(table.n_cols))


# ─── Perturbations ───

def project_donors(table: Table, donors: Sequence[Table]) -> List[Table]:
    """
    Donors reshaped to the table's header where they carry all of its columns;
    the remaining donors follow unchanged.
    """
    projected, rest = [], []
    for donor in donors:
        if donor == table:
            continue
        if donor.header != table.header and set(table.header) <= set(donor.header):
            idx = [donor.column_index(h) for h in table.header]
            projected.append(Table(table.header, [[row[j] for j in idx] for row in donor.rows]))
        else:
            rest.append(donor)
    return projected + rest


def row_addition(table: Table, donors: Sequence[Table], seed: int) -> PerturbationResult:
    """
    Insert rows from one donor table as a single contiguous block at a random
    position. Donors with the same header are preferred over donors that only
    share the width.
    """
    compatible = [d for d in donors if d.n_cols == table.n_cols]
    if not compatible:
        raise PerturbationError(f"No donor table with {table.n_cols} columns")
    same_header = [d for d in compatible if d.header == table.header]
    pool = same_header or compatible

    rng = np.random.default_rng(seed)
    n = rows_to_add(table.cell_count)
    donor = pool[int(rng.integers(len(pool)))]
    picks = rng.choice(donor.n_rows, size=n, replace=donor.n_rows < n)
    new_rows = [donor.rows[int(k)] for k in picks]
    position = int(rng.integers(table.n_rows + 1))

    rows = list(table.rows[:position]) + new_rows + list(table.rows[position:])
    row_map = [i if i <= position else i + n for i in range(1, table.n_rows + 1)]
    logger.debug_at_level(DEBUG_L2, "Perturbations", f"RA: {n} rows inserted at position {position}")
    return PerturbationResult(Table(table.header, rows), row_map, list(range(table.n_cols)),
                              added_rows=tuple(range(position + 1, position + n + 1)))


def row_permutation(table: Table, seed: int) -> PerturbationResult:
    rng = np.random.default_rng(seed)
    order = rng.permutation(table.n_rows)
    rows = [table.rows[int(k)] for k in order]
    row_map = [0] * table.n_rows
    for new, old in enumerate(order, start=1):
        row_map[int(old)] = new
    return PerturbationResult(Table(table.header, rows), row_map, list(range(table.n_cols)))


def column_permutation(table: Table, seed: int) -> PerturbationResult:
    rng = np.random.default_rng(seed)
    order = [int(k) for k in rng.permutation(table.n_cols)]
    header = [table.header[k] for k in order]
    rows = [[row[k] for k in order] for row in table.rows]
    col_map = [0] * table.n_cols
    for new, old in enumerate(order):
        col_map[old] = new
    return PerturbationResult(Table(header, rows), list(range(1, table.n_rows + 1)), col_map)


def cell_replacement(table: Table, donors: Sequence[Table], seed: int, literal: bool = False) -> PerturbationResult:
    """Replace k data cells with different contents drawn from donor data cells."""
    values = sorted({text for d in donors for _, text in d.iter_cells(include_header=False)})
    if not values:
        raise PerturbationError("Donor pool has no data cells")

    rng = np.random.default_rng(seed)
    k = min(cells_to_replace(table.cell_count, literal), table.n_rows * table.n_cols)
    rows = [list(r) for r in table.rows]
    slots = rng.choice(table.n_rows * table.n_cols, size=k, replace=False)
    replaced = set()
    for slot in sorted(int(s) for s in slots):
        i, j = divmod(slot, table.n_cols)
        candidates = [v for v in values if v != rows[i][j]]
        if not candidates:
            raise PerturbationError(f"No donor content differs from cell ({i + 1}, {j})")
        rows[i][j] = candidates[int(rng.integers(len(candidates)))]
        replaced.add(CellCoord(i + 1, j))
    row_map, col_map = _identity(table)
    logger.debug_at_level(DEBUG_L2, "Perturbations", f"CR: replaced {k} of {table.cell_count} cells")
    return PerturbationResult(Table(table.header, rows), row_map, col_map, frozenset(replaced))


def apply_perturbation(table: Table, spec: PerturbationSpec, donors: Optional[Sequence[Table]] = None,
                       seed: Optional[int] = None) -> PerturbationResult:
    donors = spec.donors if donors is None else donors
    seed = spec.seed if seed is None else seed
    if spec.kind == ROW_ADDITION:
        return row_addition(table, donors, seed)
    if spec.kind == ROW_PERMUTATION:
        return row_permutation(table, seed)
    if spec.kind == COLUMN_PERMUTATION:
        return column_permutation(table, seed)
    return cell_replacement(table, donors, seed, spec.literal_cr)


def perturb_example(example: QAExample, spec: PerturbationSpec, index: int = 0) -> QAExample:
    """
    Perturb the example's table and re-derive answer and gold cells by running
    its query on the new table. If the query no longer resolves, the original
    answer is kept and the gold cells are carried over through the row/column maps.
    """
    donors = [d for d in spec.donors if d != example.table]
    if spec.kind == ROW_ADDITION:
        donors = project_donors(example.table, donors)
    seed = int(np.random.SeedSequence([spec.seed, index]).generate_state(1)[0])
    result = apply_perturbation(example.table, spec, donors, seed=seed)
    try:
        resolved = execute_query(result.table, example.query)
        answer, gold = resolved.answer, resolved.gold_cells
    except QueryResolutionError as e:
        logger.debug_at_level(DEBUG_L2, "Perturbations",
                              f"{example.example_id}: query no longer resolves ({e}); keeping original answer")
        answer, gold = example.answer, frozenset(result.remap(c) for c in example.gold_cells)
    return replace(
        example,
        table=result.table,
        answer=answer,
        gold_cells=gold,
        answer_type=answer_type_of(example.task_kind, answer),
    )


def relative_drop(metric_clean: float, metric_perturbed: float) -> Optional[float]:
    """100 * (clean - perturbed) / clean; None (reported as N/A) when clean <= 0."""
    if metric_clean <= 0:
        return None
    return 100.0 * (metric_clean - metric_perturbed) / metric_clean
