import pytest

from Core.errors import ConfigError, QueryResolutionError
from Core.synth_tasks import (
    ARGMAX_LOOKUP, COMPARISON, COUNT, LOOKUP, SUM, TASK_KINDS, GeneratorConfig, QAExample, TaskQuery,
    answer_from_gold, answer_type_of, execute_query, generate_dataset, generate_example,
    key_pool_size, question_for_query, size_bin, statement_for_query,
)
from Core.table import CellCoord, Table


# ─── Interpreter ───

def test_lookup(small_table):
    result = execute_query(small_table, TaskQuery(LOOKUP, "name", ("boris novak",), "goals"))
    assert result.answer == "5"
    assert result.gold_cells == {CellCoord(2, 2)}


def test_count(small_table):
    result = execute_query(small_table, TaskQuery(COUNT, "nation", ("sweden",)))
    assert result.answer == "2"
    assert result.gold_cells == {CellCoord(1, 1), CellCoord(3, 1)}


def test_sum(small_table):
    result = execute_query(small_table, TaskQuery(SUM, "nation", ("sweden",), "goals"))
    assert result.answer == "5"
    assert result.gold_cells == {CellCoord(1, 2), CellCoord(3, 2)}


def test_argmax_lookup(small_table):
    result = execute_query(small_table, TaskQuery(ARGMAX_LOOKUP, "goals", (), "name"))
    assert result.answer == "boris novak"
    assert result.gold_cells == {CellCoord(1, 2), CellCoord(2, 2), CellCoord(3, 2), CellCoord(2, 0)}


def test_comparison(small_table):
    result = execute_query(small_table, TaskQuery(COMPARISON, "name", ("anna berg", "carla lund"), "goals"))
    assert result.answer == "anna berg"
    assert result.criteria_cells == {CellCoord(1, 0), CellCoord(3, 0)}


@pytest.mark.parametrize("query", [
    TaskQuery(LOOKUP, "club", ("rovers",), "goals"),
    TaskQuery(LOOKUP, "name", ("nobody",), "goals"),
    TaskQuery(LOOKUP, "nation", ("sweden",), "goals"),
    TaskQuery(SUM, "nation", ("sweden",), "name"),
    TaskQuery(COMPARISON, "nation", ("sweden", "norway"), "goals"),
])
def test_unresolvable_queries(small_table, query):
    with pytest.raises(QueryResolutionError):
        execute_query(small_table, query)


def test_answer_types():
    assert answer_type_of(COUNT, "3") == ("numeric", "aggregation")
    assert answer_type_of(LOOKUP, "cbs") == ("non-numeric", "retrieval")
    assert answer_type_of(COMPARISON, "anna berg") == ("non-numeric", "retrieval")


@pytest.mark.parametrize("n_rows, expected", [(24, 0), (25, 1), (49, 1), (50, 2), (499, 4), (500, 5)])
def test_size_bins_count_the_header(n_rows, expected):
    table = Table(["x"], [["1"]] * n_rows)
    assert size_bin(table) == expected


def test_question_and_statement_templates():
    query = TaskQuery(LOOKUP, "name", ("boris novak",), "goals")
    assert question_for_query(query) == "what is the goals when the name is boris novak?"
    assert statement_for_query(query) == (
        "to find the answer, look at the column name and rows with value boris novak, "
        "then read the column goals")


# ─── Generator ───

def test_generation_is_deterministic(generator_config):
    assert generate_example(generator_config, 5).to_dict() == generate_example(generator_config, 5).to_dict()
    other = GeneratorConfig(row_range=(2, 8), col_range=(3, 5), seed=12)
    assert [ex.to_dict() for ex in generate_dataset(other, 5)] != \
        [ex.to_dict() for ex in generate_dataset(generator_config, 5)]


def test_shards_concatenate(generator_config):
    whole = generate_dataset(generator_config, 10)
    shards = generate_dataset(generator_config, 4) + generate_dataset(generator_config, 6, start=4)
    assert [ex.to_dict() for ex in whole] == [ex.to_dict() for ex in shards]
    assert whole[3].example_id == "11-000003"


def test_generated_examples_are_consistent(dataset, generator_config):
    for ex in dataset:
        lo, hi = generator_config.row_range
        assert lo <= ex.table.n_rows <= hi
        assert ex.table.n_cols in (3, 4, 5)
        result = execute_query(ex.table, ex.query)
        assert result.answer == ex.answer
        assert result.gold_cells == ex.gold_cells
        assert answer_from_gold(ex) == ex.answer
        assert ex.answer_type == answer_type_of(ex.task_kind, ex.answer)
        assert ex.parsing_statement == statement_for_query(ex.query)
        assert all(1 <= c.row <= ex.table.n_rows for c in ex.gold_cells)


def test_every_task_kind_is_generated():
    cfg = GeneratorConfig(row_range=(2, 6), seed=3)
    kinds = {ex.task_kind for ex in generate_dataset(cfg, 200)}
    assert kinds == set(TASK_KINDS)


def test_example_dict_roundtrip(dataset):
    ex = dataset[0]
    assert QAExample.from_dict(ex.to_dict()) == ex


@pytest.mark.parametrize("kwargs", [
    {"row_range": (0, 5)},
    {"row_range": (5, 2)},
    {"col_range": (2, 7)},
    {"schemas": ("weather",)},
    {"distractor_fraction": 1.0},
    {"task_weights": {"lookup": 0.5, "count": 0.2}},
    {"task_weights": {"median": 1.0}},
    {"task_weights": {SUM: 1.0}, "col_range": (2, 2)},
    {"task_weights": {COMPARISON: 1.0}, "row_range": (1, 1)},
])
def test_invalid_generator_config(kwargs):
    with pytest.raises(ConfigError):
        GeneratorConfig(**kwargs).validate()


def test_generate_dataset_needs_examples(generator_config):
    with pytest.raises(ConfigError):
        generate_dataset(generator_config, 0)


@pytest.mark.parametrize("kwargs", [
    {"row_range": (130, 140), "schemas": ("election",)},
    {"row_range": (2, 500)},
])
def test_row_range_must_fit_a_key_pool(kwargs):
    with pytest.raises(ConfigError):
        GeneratorConfig(**kwargs).validate()


def test_large_tables_are_capped_at_the_key_pool():
    cfg = GeneratorConfig(row_range=(100, 150), col_range=(3, 5), schemas=("election",), seed=1)
    cfg.validate()
    examples = generate_dataset(cfg, 20)
    assert all(100 <= ex.table.n_rows <= key_pool_size("election") for ex in examples)
    assert all(size_bin(ex.table) >= 4 for ex in examples)


def test_mixed_schemas_reach_the_largest_size_bin():
    cfg = GeneratorConfig(row_range=(100, 300), col_range=(5, 5), seed=2)
    examples = generate_dataset(cfg, 40)
    for ex in examples:
        assert ex.table.n_rows <= key_pool_size(ex.schema)
    assert {size_bin(ex.table) for ex in examples} == {5}
    assert max(ex.table.n_rows for ex in examples) > key_pool_size("election")
