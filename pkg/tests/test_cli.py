import json
import os

import pytest

from Core.vocabulary import Vocabulary
from Managers.dataset_manager import load_dataset, save_dataset
from Managers.training_manager import build_model, save_checkpoint
from main import main
from Utils.config_utils import TrainConfig
from Utils.save_utils import read_json, read_jsonl

TRAIN_CONFIG = """
# tiny model for command-line runs
[model]
d_model = 16
n_heads = 2
n_enc_layers = 1
n_dec_layers = 1
d_ff = 32

[training]
epochs = 1
batch_size = 4
max_answer_len = 3
"""


def run(workdir, *args):
    return main(["--workdir", str(workdir), "--no-color", *args])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "generator.json").write_text(json.dumps({"row_range": [2, 5], "col_range": [3, 3], "seed": 3}))
    (root / "train.cfg").write_text(TRAIN_CONFIG)
    assert run(root, "generate", "--n", "12", "--holdout", "6", "--config", "generator.json",
               "--out", "data/train.jsonl") == 0
    assert run(root, "train", "--data", "data/train.jsonl", "--config", "train.cfg",
               "--checkpoint", "ckpt/model.npz", "--metrics", "logs/train.jsonl", "--max-steps", "2") == 0
    return root


def test_generate_outputs(workdir):
    header, examples = load_dataset(str(workdir / "data" / "train.jsonl"))
    assert len(examples) == 12
    assert header["generator"]["seed"] == 3
    _, held_out = load_dataset(str(workdir / "data" / "train_heldout.jsonl"))
    assert [ex.example_id for ex in held_out] == [f"3-{i:06d}" for i in range(12, 18)]
    manifest = read_json(str(workdir / "data" / "train.jsonl.manifest.json"))
    assert manifest["status"] == "ok"
    assert manifest["seed"] == 3
    assert len(manifest["outputs"]) == 2


def test_train_outputs(workdir):
    assert (workdir / "ckpt" / "model.npz").exists()
    manifest = read_json(str(workdir / "ckpt" / "model.npz.manifest.json"))
    assert manifest["status"] == "ok"
    assert "train.jsonl" in manifest["dataset_hashes"]
    header, records = read_jsonl(str(workdir / "logs" / "train.jsonl"), schema="tableqa-metrics")
    steps = [r for r in records if r["event"] == "train/step"]
    assert [r["step"] for r in steps] == [1, 2]
    assert records[-1]["event"] == "train/complete"


def test_eval_with_perturbations(workdir):
    args = ["eval", "--checkpoint", "ckpt/model.npz", "--data", "data/train_heldout.jsonl",
            "--perturb", "ra", "rp", "cp", "cr", "--dump", "reports/scores.jsonl", "--latents"]
    assert run(workdir, *args, "--out", "reports/eval.json") == 0
    report = read_json(str(workdir / "reports" / "eval.json"))
    assert report["n_examples"] == 6
    assert set(report["perturbations"]) == {"RowAddition", "RowPermutation", "ColumnPermutation",
                                            "CellReplacement"}
    _, dump = read_jsonl(str(workdir / "reports" / "scores.jsonl"), schema="tableqa-score-dump")
    assert len(dump) == 6
    assert all(len(r["latents"]) == len(r["eta_uns"]) for r in dump)

    assert run(workdir, *args, "--out", "reports/eval_again.json") == 0
    first = (workdir / "reports" / "eval.json").read_bytes()
    assert (workdir / "reports" / "eval_again.json").read_bytes() == first


def test_perturb_command(workdir):
    assert run(workdir, "perturb", "--kind", "RowPermutation", "--seed", "1", "--in", "data/train_heldout.jsonl",
               "--out", "data/rp.jsonl") == 0
    header, examples = load_dataset(str(workdir / "data" / "rp.jsonl"))
    _, original = load_dataset(str(workdir / "data" / "train_heldout.jsonl"))
    assert header["perturbation"] == {"kind": "rp", "seed": 1, "literal": False}
    assert [ex.answer for ex in examples] == [ex.answer for ex in original]
    assert all(sorted(a.table.rows) == sorted(b.table.rows) for a, b in zip(examples, original))


def test_diagnose_command(workdir):
    if not (workdir / "reports" / "scores.jsonl").exists():
        run(workdir, "eval", "--checkpoint", "ckpt/model.npz", "--data", "data/train_heldout.jsonl",
            "--dump", "reports/scores.jsonl", "--latents", "--out", "reports/eval.json")
    assert run(workdir, "diagnose", "--dump", "reports/scores.jsonl", "--out", "reports/diagnostics.json") == 0
    result = read_json(str(workdir / "reports" / "diagnostics.json"))
    variant = result["variants"]["model"]
    assert sum(variant["histogram"]["counts"]) == variant["histogram"]["n_tokens"]
    assert len(variant["projection"]["points"]) == variant["histogram"]["n_tokens"]


def test_highlight_command(workdir):
    assert run(workdir, "highlight", "--in", "data/train.jsonl", "--out", "reports/audit.jsonl") == 0
    header, records = read_jsonl(str(workdir / "reports" / "audit.jsonl"), schema="tableqa-highlight-audit")
    assert len(records) == 12
    for record in records:
        matched = {tuple(c) for c in record["matched"]}
        assert {tuple(c) for c in record["gold"]} <= matched


def test_ablate_command(workdir):
    preset = {"name": "mini", "rows": [{"label": "urs"}, {"label": "plain", "overrides": {"relevance_source": "none"}}],
              "comparisons": [{"left": "urs", "op": ">=", "right": "plain"}]}
    (workdir / "mini.json").write_text(json.dumps(preset))
    assert run(workdir, "ablate", "--grid", str(workdir / "mini.json"), "--data", "data/train.jsonl",
               "--eval-data", "data/train_heldout.jsonl", "--config", "train.cfg", "--max-steps", "1",
               "--out", "reports/ablation.json") == 0
    result = read_json(str(workdir / "reports" / "ablation.json"))
    assert [row["label"] for row in result["rows"]] == ["urs", "plain"]
    assert len(result["verdicts"]) == 1


@pytest.mark.parametrize("alias, first_row", [("table4", "none"), ("table5", "urs-only")])
def test_ablate_accepts_short_grid_names(workdir, alias, first_row):
    out = f"reports/ablation_{alias}.json"
    assert run(workdir, "ablate", "--grid", alias, "--data", "data/train.jsonl",
               "--eval-data", "data/train_heldout.jsonl", "--config", "train.cfg", "--max-steps", "1",
               "--out", out) == 0
    result = read_json(str(workdir / out))
    assert result["rows"][0]["label"] == first_row
    assert result["verdicts"]


def test_eval_refuses_a_checkpoint_from_another_vocabulary(workdir):
    vocab = Vocabulary(["zebra", "giraffe"])
    cfg = TrainConfig(d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=32, max_answer_len=3)
    save_checkpoint(str(workdir / "ckpt" / "foreign.npz"), build_model(cfg, vocab), vocab, cfg)
    assert run(workdir, "eval", "--checkpoint", "ckpt/foreign.npz", "--data", "data/train_heldout.jsonl",
               "--out", "reports/foreign.json") == 3
    assert not (workdir / "reports" / "foreign.json").exists()


def test_eval_tolerates_tokens_outside_the_vocabulary(workdir):
    header, examples = load_dataset(str(workdir / "data" / "train_heldout.jsonl"))
    examples[0].question = "zebra " + examples[0].question
    save_dataset(str(workdir / "data" / "odd.jsonl"), examples, None, start=header["start"])
    assert run(workdir, "eval", "--checkpoint", "ckpt/model.npz", "--data", "data/odd.jsonl",
               "--out", "reports/odd.json") == 0
    assert read_json(str(workdir / "reports" / "odd.json"))["n_examples"] == 6


def test_bad_override_is_a_config_error(workdir):
    assert run(workdir, "train", "--data", "data/train.jsonl", "--set", "colour=red") == 2
    failed = [read_json(str(workdir / "runs" / name)) for name in os.listdir(workdir / "runs")]
    assert any(m["command"] == "train" and m["status"] == "failed" for m in failed)


def test_missing_data_is_a_runtime_failure(workdir):
    assert run(workdir, "eval", "--checkpoint", "ckpt/model.npz", "--data", "data/missing.jsonl",
               "--out", "reports/never.json") == 3
    assert not (workdir / "reports" / "never.json").exists()


def test_unknown_perturbation_kind(workdir):
    assert run(workdir, "perturb", "--kind", "shuffle", "--in", "data/train.jsonl", "--out", "data/x.jsonl") == 2
    assert not (workdir / "data" / "x.jsonl").exists()


def test_argument_errors_exit_with_usage():
    with pytest.raises(SystemExit) as info:
        main(["train"])
    assert info.value.code == 2
