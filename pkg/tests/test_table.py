import numpy as np
import pytest

from Core.errors import TableStructureError
from Core.table import (
    TAG_HEAD, TAG_SEPARATOR, CellCoord, LinearizedTable, Table, flatten_table, linearize_table,
    reconstruct_table, tokenize_linearize,
)
from Core.vocabulary import (
    SPECIAL_TOKENS, UNK_TOKEN, Vocabulary, detokenize, tokenize_text,
)


# ─── Vocabulary ───

def test_special_tokens_come_first():
    vocab = Vocabulary()
    assert vocab.to_json() == list(SPECIAL_TOKENS)
    assert vocab.pad_id == 0
    assert vocab.id_to_token[vocab.unk_id] == UNK_TOKEN


def test_tokenizer_keeps_markers_whole():
    assert tokenize_text("[HEAD]: a || b|c") == ["[HEAD]", ":", "a", "||", "b", "|", "c"]
    assert tokenize_text("7-3") == ["7", "-", "3"]


def test_encode_decode():
    vocab = Vocabulary.build(["a b a"])
    n = len(SPECIAL_TOKENS)
    assert len(vocab) == n + 2
    assert vocab.encode("b a c") == [n + 1, n, vocab.unk_id]
    assert vocab.unk_count == 1
    assert vocab.decode([vocab.boa_id, n, n + 1, vocab.eoa_id, vocab.pad_id]) == "a b"


@pytest.mark.parametrize("tokens, text", [
    (["7", "-", "3"], "7-3"),
    (["1995", "/", "96"], "1995/96"),
    (["the", "silent", "harbor"], "the silent harbor"),
])
def test_detokenize(tokens, text):
    assert detokenize(tokens) == text


def test_fingerprint_depends_on_order():
    assert Vocabulary(["a", "b"]).fingerprint() == Vocabulary(["a", "b"]).fingerprint()
    assert Vocabulary(["a", "b"]).fingerprint() != Vocabulary(["b", "a"]).fingerprint()
    restored = Vocabulary.from_json(Vocabulary(["a", "b"]).to_json())
    assert restored.fingerprint() == Vocabulary(["a", "b"]).fingerprint()


def test_from_json_requires_specials():
    with pytest.raises(ValueError):
        Vocabulary.from_json(["a", "b"])


def test_extends():
    base = Vocabulary(["a", "b"])
    assert Vocabulary(["a", "b", "c"]).extends(base)
    assert base.extends(base)
    assert not Vocabulary(["b", "a", "c"]).extends(base)
    assert not Vocabulary(["a"]).extends(base)


# ─── Table ───

def test_table_shape(small_table):
    assert small_table.n_rows == 3
    assert small_table.n_cols == 3
    assert small_table.cell_count == 12
    assert small_table.cell(CellCoord(0, 1)) == "nation"
    assert small_table.cell(CellCoord(2, 0)) == "boris novak"
    assert small_table.column("goals") == ["3", "5", "2"]
    with pytest.raises(KeyError):
        small_table.column_index("missing")


@pytest.mark.parametrize("header, rows", [
    (["a", "b"], [["1"]]),
    (["a"], []),
    ([], [[]]),
    (["a"], [[" x"]]),
    (["a"], [["x | y"]]),
    (["[ROW]"], [["x"]]),
])
def test_invalid_tables(header, rows):
    with pytest.raises(TableStructureError):
        Table(header, rows)


def test_from_dict_normalizes_whitespace():
    table = Table.from_dict({"header": ["  a   b "], "rows": [["x\ty"]]})
    assert table.header == ("a b",)
    assert table.rows == (("x y",),)
    with pytest.raises(TableStructureError):
        Table.from_dict({"header": ["a"]})


def test_flatten(small_table):
    assert flatten_table(small_table) == (
        "[HEAD]: name | nation | goals "
        "[ROW] 1: anna berg | sweden | 3 "
        "[ROW] 2: boris novak | norway | 5 "
        "[ROW] 3: carla lund | sweden | 2"
    )


def test_linearize_token_cell_map(small_table, vocab):
    lin = linearize_table(small_table, vocab)
    assert len(lin) == 34
    assert lin.token_strings[:3] == ["[HEAD]", ":", "name"]
    assert lin.token_cell_map[0] == TAG_HEAD
    assert lin.token_cell_map[3] == TAG_SEPARATOR
    assert lin.token_cell_map[7] == "ROW-1"
    assert lin.token_cell_map[8] == "ROW-1"
    positions = lin.cell_positions()
    assert positions[CellCoord(1, 0)] == [10, 11]
    assert positions[CellCoord(1, 2)] == [15]
    # the row number after [ROW] is a marker, not the cell "3"
    assert lin.token_strings[26] == "3"
    assert lin.token_cell_map[26] == "ROW-3"
    assert set(positions) == {coord for coord, _ in small_table.iter_cells()}


def test_row_of(small_table, vocab):
    lin = linearize_table(small_table, vocab)
    assert lin.row_of(0) == 0
    assert lin.row_of(3) == 0
    assert lin.row_of(12) == 1
    assert lin.row_of(17) == 2
    assert lin.row_of(33) == 3


def test_reconstruct_roundtrip(small_table, vocab):
    assert reconstruct_table(linearize_table(small_table, vocab)) == small_table


def test_reconstruct_rejects_broken_markers(small_table, vocab):
    lin = linearize_table(small_table, vocab)
    broken = LinearizedTable(lin.tokens, lin.token_strings, lin.token_spans,
                             ["ROW-1"] + lin.token_cell_map[1:], lin.flat_text)
    with pytest.raises(TableStructureError):
        reconstruct_table(broken)


def test_generated_tables_roundtrip(dataset, vocab):
    for ex in dataset:
        assert reconstruct_table(linearize_table(ex.table, vocab)) == ex.table


CELL_WORDS = ("anna", "7-3", "1995/96", "o'neil", "3.5", "$12", "50%", "st.", "north", "x_y", "(a)", "42")


def test_random_tables_roundtrip(vocab):
    rng = np.random.default_rng(0)
    for _ in range(300):
        n_rows, n_cols = int(rng.integers(1, 15)), int(rng.integers(1, 7))

        def cell():
            return " ".join(rng.choice(CELL_WORDS, size=int(rng.integers(1, 4))))

        table = Table([cell() for _ in range(n_cols)], [[cell() for _ in range(n_cols)] for _ in range(n_rows)])
        lin = linearize_table(table, vocab)
        assert reconstruct_table(lin) == table
        assert lin.flat_text == flatten_table(table)


def test_tokenize_linearize(small_table, vocab):
    encoded = tokenize_linearize(small_table, "how many goals?", vocab)
    assert encoded.question_length == 4
    assert encoded.table_span == (4, 38)
    assert len(encoded.input_ids) == 38
    assert encoded.input_ids[4] == vocab.token_to_id["[HEAD]"]


@pytest.mark.parametrize("question", ["", "   "])
def test_empty_question_rejected(small_table, vocab, question):
    with pytest.raises(ValueError):
        tokenize_linearize(small_table, question, vocab)


def test_unknown_words_map_to_unk(small_table):
    vocab = Vocabulary()
    lin = linearize_table(small_table, vocab)
    assert lin.tokens[2] == vocab.unk_id
    assert lin.tokens[0] == vocab.token_to_id["[HEAD]"]
    assert vocab.unk_count > 0
