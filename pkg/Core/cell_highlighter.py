# Core/cell_highlighter.py

"""
Deterministic cell highlighter. A parsing statement names a criteria column,
criteria values (or the "highest value" rule) and optionally a target column;
the highlighter emits the contents of the cells that satisfy those criteria.
Cell scores are then assigned by exact string match against the table tokens.
"""
import re
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from Core.table import CellCoord, LinearizedTable, Table
from Core.vocabulary import CELL_DELIMITER
from Utils.log_utils import get_logger, DEBUG_L2

logger = get_logger()

SOURCE_STATEMENT = "statement"
SOURCE_QUESTION = "question"
SOURCE_NONE = "none"
HIGHLIGHT_SOURCES = (SOURCE_STATEMENT, SOURCE_QUESTION, SOURCE_NONE)

_STATEMENT_RE = re.compile(
    r"look at the column (?P<column>.+?) and "
    r"(?:(?P<count>count )?rows with value (?P<values>.+?)|(?P<argmax>find the row with the highest value))"
    r"(?:, then (?:read|add up|compare) the column (?P<target>.+?))?\s*\.?\s*$"
)


@dataclass(frozen=True)
class ParsedStatement:
    column: str
    values: Tuple[str, ...] = ()
    target: Optional[str] = None
    argmax: bool = False


@dataclass
class HighlightResult:
    highlighted_strings: List[str]
    matched_coords: FrozenSet[CellCoord]
    eta_cell: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def joined(self) -> str:
        return f" {CELL_DELIMITER} ".join(self.highlighted_strings)


def normalize_cell_text(text: str) -> str:
    return " ".join(text.split())


def parse_statement(statement: str) -> Optional[ParsedStatement]:
    match = _STATEMENT_RE.search(statement.strip())
    if not match:
        return None
    values = ()
    if match.group("values"):
        values = tuple(v.strip() for v in match.group("values").split(" or "))
    return ParsedStatement(
        column=match.group("column").strip(),
        values=values,
        target=match.group("target").strip() if match.group("target") else None,
        argmax=bool(match.group("argmax")),
    )


def _as_number(text: str) -> Optional[float]:
    try:
        return float(text)
    except ValueError:
        return None


def _highlight_coords(table: Table, parsed: ParsedStatement) -> List[CellCoord]:
    try:
        c = table.column_index(parsed.column)
        t = table.column_index(parsed.target) if parsed.target else None
    except KeyError as e:
        logger.warning("CellHighlighter", f"Statement references missing column {e}")
        return []

    if parsed.argmax:
        numbers = [(_as_number(row[c]), i) for i, row in enumerate(table.rows, start=1)]
        coords = [CellCoord(i, c) for _, i in numbers]
        valid = [(v, i) for v, i in numbers if v is not None]
        if t is not None and valid:
            best = max(v for v, _ in valid)
            for v, i in valid:
                if v == best:
                    coords.append(CellCoord(i, t))
        return sorted(set(coords))

    wanted = {normalize_cell_text(v) for v in parsed.values}
    coords = []
    for i, row in enumerate(table.rows, start=1):
        if normalize_cell_text(row[c]) not in wanted:
            continue
        columns = range(table.n_cols) if t is None else sorted({c, t})
        coords.extend(CellCoord(i, j) for j in columns)
    return coords


def highlight_cells(table: Table, statement: str) -> List[str]:
    """Ordered contents of the cells satisfying the statement's criteria."""
    parsed = parse_statement(statement)
    if parsed is None:
        logger.warning("CellHighlighter", f"Could not parse statement: {statement!r}")
        return []
    return [table.cell(coord) for coord in _highlight_coords(table, parsed)]


def highlight_from_question(table: Table, question: str) -> List[str]:
    """
    Question-as-input variant: a question carries no explicit column criteria,
    so every data cell whose full content occurs in the question as a whole
    phrase is highlighted.
    """
    lowered = f" {normalize_cell_text(question).lower()} "
    lowered = re.sub(r"[?!,]", " ", lowered)
    lowered = f" {' '.join(lowered.split())} "
    out = []
    for coord, text in table.iter_cells(include_header=False):
        key = normalize_cell_text(text).lower()
        if key and f" {key} " in lowered:
            out.append(text)
    return out


def assign_cell_scores(lin: LinearizedTable, highlighted: Sequence[str]) -> np.ndarray:
    """
    Per table token: 1.0 iff the token belongs to a data cell whose full content
    equals one of the highlighted strings, otherwise 0.0. Markers score 0.
    """
    wanted = {normalize_cell_text(s) for s in highlighted}
    scores = np.zeros(len(lin), dtype=float)
    if not wanted:
        return scores
    contents = cell_contents(lin)
    for p, tag in enumerate(lin.token_cell_map):
        if isinstance(tag, CellCoord) and tag.row >= 1 and contents[tag] in wanted:
            scores[p] = 1.0
    return scores


def cell_contents(lin: LinearizedTable) -> dict:
    """CellCoord -> normalized cell text, recovered from token spans."""
    spans = {}
    for (start, end), tag in zip(lin.token_spans, lin.token_cell_map):
        if isinstance(tag, CellCoord):
            lo, hi = spans.get(tag, (start, end))
            spans[tag] = (min(lo, start), max(hi, end))
    return {coord: normalize_cell_text(lin.flat_text[s:e]) for coord, (s, e) in spans.items()}


def highlight(table: Table, lin: LinearizedTable, text: str, source: str = SOURCE_STATEMENT) -> HighlightResult:
    """Highlight from a statement or a question and score the linearized table."""
    if source == SOURCE_STATEMENT:
        strings = highlight_cells(table, text)
    elif source == SOURCE_QUESTION:
        strings = highlight_from_question(table, text)
    elif source == SOURCE_NONE:
        strings = []
    else:
        raise ValueError(f"Unknown highlight source {source!r}")

    eta_cell = assign_cell_scores(lin, strings)
    wanted = {normalize_cell_text(s) for s in strings}
    matched = frozenset(coord for coord, content in cell_contents(lin).items()
                        if coord.row >= 1 and content in wanted)
    logger.debug_at_level(DEBUG_L2, "CellHighlighter",
                          f"{len(strings)} highlighted strings matched {len(matched)} cells ({source})")
    return HighlightResult(strings, matched, eta_cell)
