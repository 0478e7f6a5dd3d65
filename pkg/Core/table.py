# Core/table.py

"""
Table data model, flattening into the marker format and bookkeeping between
table tokens and cell coordinates.

Flattened format (1-based row numbers after [ROW]):

    [HEAD]: h1 | h2 [ROW] 1: c11 | c12 [ROW] 2: c21 | c22
"""
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

from Core.errors import TableStructureError
from Core.vocabulary import (
    Vocabulary, tokenize_with_spans, HEAD_MARKER, ROW_MARKER, COL_SEPARATOR, RESERVED_MARKERS,
)
from Utils.log_utils import get_logger, DEBUG_L2

logger = get_logger()

# Marker tags stored in token_cell_map for non-cell tokens
TAG_HEAD = "HEAD"
TAG_SEPARATOR = "SEP"
TAG_ROW_PREFIX = "ROW-"


class CellCoord(NamedTuple):
    """row 0 is the header row, rows 1..N_row are data rows."""
    row: int
    col: int


TokenTag = Union[CellCoord, str]


@dataclass(frozen=True)
class Table:
    header: Tuple[str, ...]
    rows: Tuple[Tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "header", tuple(self.header))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        if len(self.header) < 1:
            raise TableStructureError("Table needs at least one column")
        if len(self.rows) < 1:
            raise TableStructureError("Table needs at least one data row")
        for i, row in enumerate(self.rows, start=1):
            if len(row) != len(self.header):
                raise TableStructureError(
                    f"Row {i} has {len(row)} cells, expected {len(self.header)}")
        for coord, text in self.iter_cells():
            _check_cell_text(coord, text)

    # ─── Shape ───
    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.header)

    @property
    def cell_count(self) -> int:
        """Header included: (N_row + 1) * N_col."""
        return (self.n_rows + 1) * self.n_cols

    # ─── Access ───
    def cell(self, coord: CellCoord) -> str:
        if coord.row == 0:
            return self.header[coord.col]
        return self.rows[coord.row - 1][coord.col]

    def iter_cells(self, include_header: bool = True):
        if include_header:
            for j, text in enumerate(self.header):
                yield CellCoord(0, j), text
        for i, row in enumerate(self.rows, start=1):
            for j, text in enumerate(row):
                yield CellCoord(i, j), text

    def column_index(self, name: str) -> int:
        try:
            return self.header.index(name)
        except ValueError:
            raise KeyError(name) from None

    def column(self, name: str) -> List[str]:
        j = self.column_index(name)
        return [row[j] for row in self.rows]

    # ─── Serialization ───
    def to_dict(self) -> Dict:
        return {"header": list(self.header), "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, data: Dict) -> "Table":
        """Cells are whitespace-normalized on the way in."""
        try:
            header = [_normalize_cell(c) for c in data["header"]]
            rows = [[_normalize_cell(c) for c in row] for row in data["rows"]]
        except (KeyError, TypeError) as e:
            raise TableStructureError(f"Malformed table record: {e}") from e
        return cls(header, rows)


def _normalize_cell(value) -> str:
    return " ".join(str(value).split())


def _check_cell_text(coord: CellCoord, text: str):
    if not isinstance(text, str):
        raise TableStructureError(f"Cell {tuple(coord)} is not a string")
    if text != text.strip():
        raise TableStructureError(f"Cell {tuple(coord)} has surrounding whitespace: {text!r}")
    for marker in RESERVED_MARKERS:
        if marker in text:
            raise TableStructureError(f"Cell {tuple(coord)} contains reserved marker {marker!r}: {text!r}")


# ─── Flattening ───

def _flatten_with_spans(table: Table):
    """Flattened string plus cell spans and row-segment start offsets."""
    parts: List[str] = []
    cell_spans: List[Tuple[int, int, CellCoord]] = []
    segments: List[Tuple[int, str]] = []
    offset = 0

    def emit(text: str):
        nonlocal offset
        parts.append(text)
        offset += len(text)

    def emit_cells(row_index: int, cells: Sequence[str]):
        for j, text in enumerate(cells):
            if j > 0:
                emit(f" {COL_SEPARATOR} ")
            cell_spans.append((offset, offset + len(text), CellCoord(row_index, j)))
            emit(text)

    segments.append((0, TAG_HEAD))
    emit(f"{HEAD_MARKER}: ")
    emit_cells(0, table.header)
    for i, row in enumerate(table.rows, start=1):
        emit(" ")
        segments.append((offset, f"{TAG_ROW_PREFIX}{i}"))
        emit(f"{ROW_MARKER} {i}: ")
        emit_cells(i, row)
    return "".join(parts), cell_spans, segments


def flatten_table(table: Table) -> str:
    """Flatten a table into the [HEAD]/[ROW] marker string."""
    return _flatten_with_spans(table)[0]


@dataclass
class LinearizedTable:
    tokens: List[int]
    token_strings: List[str]
    token_spans: List[Tuple[int, int]]
    token_cell_map: List[TokenTag]
    flat_text: str

    def __len__(self):
        return len(self.tokens)

    def cell_positions(self) -> Dict[CellCoord, List[int]]:
        """CellCoord -> token positions (relative to the table region)."""
        positions: Dict[CellCoord, List[int]] = {}
        for p, tag in enumerate(self.token_cell_map):
            if isinstance(tag, CellCoord):
                positions.setdefault(tag, []).append(p)
        return positions

    def row_of(self, p: int) -> int:
        """Table row (0 = header) that token p belongs to, markers included."""
        tag = self.token_cell_map[p]
        if isinstance(tag, CellCoord):
            return tag.row
        if tag == TAG_HEAD:
            return 0
        if tag.startswith(TAG_ROW_PREFIX):
            return int(tag[len(TAG_ROW_PREFIX):])
        # separators belong to the row of the nearest preceding token
        for q in range(p - 1, -1, -1):
            if self.token_cell_map[q] != TAG_SEPARATOR:
                return self.row_of(q)
        return 0

    def summary(self) -> Dict:
        """Compact JSON-able view of token_cell_map for score dumps."""
        return {
            "n_tokens": len(self.tokens),
            "cells": [list(tag) if isinstance(tag, CellCoord) else tag for tag in self.token_cell_map],
        }


def linearize_table(table: Table, vocab: Vocabulary) -> LinearizedTable:
    flat_text, cell_spans, segments = _flatten_with_spans(table)
    cell_starts = [start for start, _, _ in cell_spans]
    segment_starts = [start for start, _ in segments]

    token_strings, spans, tags = [], [], []
    for tok, start, end in tokenize_with_spans(flat_text):
        k = bisect_right(cell_starts, start) - 1
        if k >= 0 and cell_spans[k][0] <= start and end <= cell_spans[k][1] and cell_spans[k][1] > cell_spans[k][0]:
            tag: TokenTag = cell_spans[k][2]
        elif tok == COL_SEPARATOR:
            tag = TAG_SEPARATOR
        else:
            tag = segments[bisect_right(segment_starts, start) - 1][1]
        token_strings.append(tok)
        spans.append((start, end))
        tags.append(tag)

    return LinearizedTable(
        tokens=vocab.encode_tokens(token_strings),
        token_strings=token_strings,
        token_spans=spans,
        token_cell_map=tags,
        flat_text=flat_text,
    )


@dataclass
class EncodedInput:
    """I_tokens = (Q_tokens ; T_tokens); the boundary is positional."""
    input_ids: List[int]
    question_length: int
    linearized: LinearizedTable
    question_tokens: List[str] = field(default_factory=list)

    @property
    def table_span(self) -> Tuple[int, int]:
        return self.question_length, self.question_length + len(self.linearized)


def tokenize_linearize(table: Table, question: str, vocab: Vocabulary) -> EncodedInput:
    """Tokenize the question and the flattened table into one input sequence."""
    question_tokens = [tok for tok, _, _ in tokenize_with_spans(question)]
    if not question_tokens:
        raise ValueError("Question must contain at least one token")
    unk_before = vocab.unk_count
    question_ids = vocab.encode_tokens(question_tokens)
    lin = linearize_table(table, vocab)
    unk_added = vocab.unk_count - unk_before
    if unk_added:
        logger.debug_at_level(DEBUG_L2, "Table", f"{unk_added} tokens replaced by UNK while linearizing")
    return EncodedInput(
        input_ids=question_ids + lin.tokens,
        question_length=len(question_ids),
        linearized=lin,
        question_tokens=question_tokens,
    )


def reconstruct_table(lin: LinearizedTable) -> Table:
    """Inverse of linearization; raises TableStructureError on malformed marker structure."""
    if not lin.token_cell_map or lin.token_cell_map[0] != TAG_HEAD:
        raise TableStructureError("Linearized table must start with the [HEAD] marker")

    rows: List[List[Optional[Tuple[int, int]]]] = []
    current_segment = None
    for (start, end), tag in zip(lin.token_spans, lin.token_cell_map):
        if tag == TAG_HEAD or (isinstance(tag, str) and tag.startswith(TAG_ROW_PREFIX)):
            if tag != current_segment:
                expected = TAG_HEAD if not rows else f"{TAG_ROW_PREFIX}{len(rows)}"
                if tag != expected:
                    raise TableStructureError(f"Unexpected marker {tag}, expected {expected}")
                rows.append([None])
                current_segment = tag
            continue
        if not rows:
            raise TableStructureError("Token before the first marker")
        if tag == TAG_SEPARATOR:
            rows[-1].append(None)
            continue
        if not isinstance(tag, CellCoord):
            raise TableStructureError(f"Unknown token tag {tag!r}")
        row_index = len(rows) - 1
        col_index = len(rows[-1]) - 1
        if tag != CellCoord(row_index, col_index):
            raise TableStructureError(f"Token tagged {tuple(tag)} found at cell ({row_index}, {col_index})")
        span = rows[-1][-1]
        rows[-1][-1] = (start, end) if span is None else (span[0], end)

    cells = [[lin.flat_text[s[0]:s[1]] if s else "" for s in row] for row in rows]
    if len(cells) < 2:
        raise TableStructureError("Linearized table has no data rows")
    return Table(cells[0], cells[1:])
