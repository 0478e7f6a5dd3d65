import numpy as np
import pytest

from Core.errors import DiagnosticsError
from Managers.diagnostics_manager import (
    diagnose, load_score_dumps, project_latents, relevance_labels, score_histogram,
)
from Managers.evaluation_manager import SCORE_DUMP_SCHEMA
from Utils.save_utils import write_jsonl


def write_dump(path, records, variant=""):
    write_jsonl(str(path), records, header={"schema": SCORE_DUMP_SCHEMA, "version": 1, "variant": variant})
    return str(path)


def record(eta_uns, variant="", latents=None):
    out = {"example_id": "x", "variant": variant, "eta_uns": list(eta_uns)}
    if latents is not None:
        out["latents"] = np.asarray(latents).tolist()
    return out


def test_flat_scores_fill_one_bucket():
    hist = score_histogram(np.full(40, 0.5))
    assert hist["counts"][10] == 40
    assert sum(hist["counts"]) == 40
    assert hist["middle_fraction"] == 1.0
    assert hist["entropy"] == pytest.approx(0.0)
    assert len(hist["edges"]) == 21


def test_histogram_of_nothing():
    with pytest.raises(DiagnosticsError):
        score_histogram(np.zeros(0))


def test_relevance_labels():
    assert relevance_labels(np.array([0.1, 0.2, 0.9])).tolist() == [False, False, True]
    assert not relevance_labels(np.full(5, 0.5)).any()


def test_projection_shapes():
    rng = np.random.default_rng(0)
    latents = rng.normal(size=(12, 4))
    assert project_latents(latents, "pca").shape == (12, 2)
    assert project_latents(latents, "tsne", seed=1).shape == (12, 2)
    assert np.allclose(project_latents(latents, "tsne", seed=1), project_latents(latents, "tsne", seed=1))
    assert project_latents(rng.normal(size=(5, 1)), "pca").shape == (5, 2)


@pytest.mark.parametrize("latents, method", [(np.zeros((2, 4)), "pca"), (np.zeros((5, 4)), "umap")])
def test_projection_rejects_bad_input(latents, method):
    with pytest.raises(DiagnosticsError):
        project_latents(latents, method)


def test_variants_are_grouped(tmp_path):
    path = write_dump(tmp_path / "mixed.jsonl", [record([0.2, 0.3], "urs"), record([0.6], "none"),
                                                 record([0.1], "urs")])
    unnamed = write_dump(tmp_path / "plain.jsonl", [record([0.4])])
    variants = load_score_dumps([path, unnamed])
    assert list(variants) == ["urs", "none", "plain"]
    assert variants["urs"].scores.tolist() == [0.2, 0.3, 0.1]


def test_diagnose_with_latents(tmp_path):
    rng = np.random.default_rng(1)
    scores = rng.uniform(size=10)
    path = write_dump(tmp_path / "scores.jsonl", [
        record(scores[:6], "urs", rng.normal(size=(6, 4))),
        record(scores[6:], "urs", rng.normal(size=(4, 4))),
    ])
    out = diagnose([path], projection="pca")
    result = out["variants"]["urs"]
    assert result["histogram"]["n_tokens"] == 10
    projection = result["projection"]
    assert len(projection["points"]) == 10
    assert projection["n_relevant"] + projection["n_irrelevant"] == 10
    assert projection["relevant"] == (scores > scores.mean()).tolist()


def test_diagnose_without_projection(tmp_path):
    path = write_dump(tmp_path / "scores.jsonl", [record([0.5] * 4, "urs", np.zeros((4, 3)))])
    out = diagnose([path], projection=None)
    assert "projection" not in out["variants"]["urs"]


def test_mismatched_latents(tmp_path):
    path = write_dump(tmp_path / "scores.jsonl", [record([0.5] * 4, "urs", np.zeros((3, 3)))])
    with pytest.raises(DiagnosticsError):
        diagnose([path])


def test_empty_or_foreign_dumps(tmp_path):
    empty = write_dump(tmp_path / "empty.jsonl", [])
    with pytest.raises(DiagnosticsError):
        diagnose([empty])
    foreign = tmp_path / "foreign.jsonl"
    write_jsonl(str(foreign), [record([0.5])], header={"schema": "something-else"})
    with pytest.raises(DiagnosticsError):
        load_score_dumps([str(foreign)])
