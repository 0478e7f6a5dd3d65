import numpy as np
import pytest

from Core.cell_highlighter import (
    SOURCE_NONE, SOURCE_QUESTION, HighlightResult, ParsedStatement, assign_cell_scores, highlight,
    highlight_cells, highlight_from_question, parse_statement,
)
from Core.synth_tasks import ARGMAX_LOOKUP, COMPARISON, COUNT, LOOKUP, TaskQuery, statement_for_query
from Core.table import CellCoord, Table, linearize_table


def test_parse_statement():
    parsed = parse_statement("to find the answer, look at the column nation and rows with value sweden, "
                             "then read the column goals")
    assert parsed == ParsedStatement("nation", ("sweden",), "goals", False)
    assert parse_statement("the answer is somewhere") is None


def test_full_rows_without_target():
    table = Table(["score", "result"], [["38-12", "loss"], ["45-0", "loss"], ["21-14", "win"]])
    assert highlight_cells(table, "look at the column result and rows with value loss") == \
        ["38-12", "loss", "45-0", "loss"]


def test_lookup_statement(small_table):
    statement = statement_for_query(TaskQuery(LOOKUP, "name", ("boris novak",), "goals"))
    assert highlight_cells(small_table, statement) == ["boris novak", "5"]


def test_count_statement(small_table):
    statement = statement_for_query(TaskQuery(COUNT, "nation", ("sweden",)))
    assert highlight_cells(small_table, statement) == ["anna berg", "sweden", "3", "carla lund", "sweden", "2"]


def test_argmax_statement(small_table):
    statement = statement_for_query(TaskQuery(ARGMAX_LOOKUP, "goals", (), "name"))
    assert highlight_cells(small_table, statement) == ["3", "boris novak", "5", "2"]


def test_comparison_statement(small_table):
    statement = statement_for_query(TaskQuery(COMPARISON, "name", ("anna berg", "carla lund"), "goals"))
    assert highlight_cells(small_table, statement) == ["anna berg", "3", "carla lund", "2"]


@pytest.mark.parametrize("statement", [
    "look at the column nation and rows with value chile",
    "look at the column club and rows with value rovers",
    "no criteria here",
])
def test_empty_highlights(small_table, statement):
    assert highlight_cells(small_table, statement) == []


def test_matches_brute_force_scan(dataset):
    for ex in dataset:
        if ex.query.values:
            c = ex.table.column_index(ex.query.criteria_column)
            columns = ([c, ex.table.column_index(ex.query.target_column)] if ex.query.target_column
                       else range(ex.table.n_cols))
            expected = [row[j] for row in ex.table.rows if row[c] in ex.query.values for j in sorted(set(columns))]
            assert highlight_cells(ex.table, ex.parsing_statement) == expected


def test_question_source(small_table):
    assert highlight_from_question(small_table, "how many goals did boris novak score?") == ["boris novak"]


def test_cell_scores(small_table, vocab):
    lin = linearize_table(small_table, vocab)
    scores = assign_cell_scores(lin, ["sweden"])
    assert set(np.flatnonzero(scores)) == {13, 31}
    assert set(np.unique(scores)) <= {0.0, 1.0}


def test_cell_scores_skip_markers_and_header(small_table, vocab):
    lin = linearize_table(small_table, vocab)
    # "3" is also the row number after the third [ROW]
    assert list(np.flatnonzero(assign_cell_scores(lin, ["3"]))) == [15]
    assert not assign_cell_scores(lin, ["nation"]).any()
    assert not assign_cell_scores(lin, []).any()


def test_exact_match_only(vocab):
    table = Table(["score", "result"], [["38-12", "loss"], ["38", "win"]])
    lin = linearize_table(table, vocab)
    positions = lin.cell_positions()
    scores = assign_cell_scores(lin, ["38"])
    assert scores[positions[CellCoord(2, 0)]].tolist() == [1.0]
    assert not scores[positions[CellCoord(1, 0)]].any()


def test_highlight_result(small_table, vocab):
    lin = linearize_table(small_table, vocab)
    statement = statement_for_query(TaskQuery(COUNT, "nation", ("sweden",)))
    result = highlight(small_table, lin, statement)
    assert result.matched_coords == {CellCoord(r, c) for r in (1, 3) for c in range(3)}
    positions = lin.cell_positions()
    covered = sorted(p for coord in result.matched_coords for p in positions[coord])
    assert list(np.flatnonzero(result.eta_cell)) == covered
    assert result.joined.startswith("anna berg || sweden")


def test_highlight_sources(small_table, vocab):
    lin = linearize_table(small_table, vocab)
    none = highlight(small_table, lin, "anything", SOURCE_NONE)
    assert none.highlighted_strings == [] and not none.eta_cell.any()
    question = highlight(small_table, lin, "what is the nation of carla lund?", SOURCE_QUESTION)
    assert question.matched_coords == {CellCoord(3, 0)}
    with pytest.raises(ValueError):
        highlight(small_table, lin, "anything", "oracle")


def test_gold_cells_are_covered(dataset, vocab):
    for ex in dataset:
        result = highlight(ex.table, linearize_table(ex.table, vocab), ex.parsing_statement)
        assert ex.gold_cells <= result.matched_coords


def test_joined_uses_cell_delimiter():
    assert HighlightResult(["a", "b"], frozenset()).joined == "a || b"
