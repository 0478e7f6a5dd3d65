import os

import numpy as np
import pytest

from Core.errors import TableQAError
from Utils.save_utils import (
    META_KEY, JsonlStream, atomic_write_text, load_checkpoint_npz, read_json, read_jsonl, save_checkpoint_npz,
    staged_outputs, write_json, write_jsonl,
)


def test_atomic_write_creates_directories(tmp_path):
    path = tmp_path / "a" / "b" / "out.txt"
    atomic_write_text(str(path), "hello\n")
    assert path.read_text() == "hello\n"
    assert os.listdir(path.parent) == ["out.txt"]


def test_json_is_sorted(tmp_path):
    path = str(tmp_path / "out.json")
    write_json(path, {"b": 1, "a": [1, 2]})
    assert read_json(path) == {"a": [1, 2], "b": 1}
    with open(path) as f:
        text = f.read()
    assert text.index('"a"') < text.index('"b"')


def test_jsonl_schema(tmp_path):
    path = str(tmp_path / "data.jsonl")
    write_jsonl(path, [{"x": 1}, {"x": 2}], header={"schema": "demo", "version": 1})
    header, records = read_jsonl(path, schema="demo")
    assert header == {"schema": "demo", "version": 1}
    assert records == [{"x": 1}, {"x": 2}]
    with pytest.raises(TableQAError):
        read_jsonl(path, schema="other")


def test_jsonl_without_header(tmp_path):
    path = str(tmp_path / "plain.jsonl")
    write_jsonl(path, [{"x": 1}])
    assert read_jsonl(path) == (None, [{"x": 1}])
    with pytest.raises(TableQAError):
        read_jsonl(path, schema="demo")


def test_jsonl_read_errors(tmp_path):
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"x": 1}\n{oops\n')
    with pytest.raises(TableQAError):
        read_jsonl(str(broken))
    with pytest.raises(TableQAError):
        read_jsonl(str(tmp_path / "missing.jsonl"))


def test_jsonl_stream(tmp_path):
    path = str(tmp_path / "logs" / "metrics.jsonl")
    stream = JsonlStream(path, header={"schema": "metrics"})
    stream.write({"step": 1})
    stream.close()
    stream.close()
    assert read_jsonl(path, schema="metrics") == ({"schema": "metrics"}, [{"step": 1}])


def test_checkpoint_npz_roundtrip(tmp_path):
    path = str(tmp_path / "ckpt" / "model.npz")
    arrays = {"w": np.arange(6.0).reshape(2, 3), "flag": np.array(True)}
    assert save_checkpoint_npz(path, arrays, {"steps": 3})
    loaded, meta = load_checkpoint_npz(path)
    assert meta == {"steps": 3}
    assert np.array_equal(loaded["w"], arrays["w"])
    assert bool(loaded["flag"])


def test_checkpoint_npz_reserved_key(tmp_path):
    path = tmp_path / "model.npz"
    assert not save_checkpoint_npz(str(path), {META_KEY: np.zeros(1)}, {})
    assert not path.exists()


def test_checkpoint_npz_needs_metadata(tmp_path):
    path = str(tmp_path / "raw.npz")
    np.savez(path, w=np.zeros(2))
    with pytest.raises(TableQAError):
        load_checkpoint_npz(path)
    with pytest.raises(TableQAError):
        load_checkpoint_npz(str(tmp_path / "missing.npz"))


def test_staged_outputs_remove_new_files_on_failure(tmp_path):
    old = tmp_path / "old.txt"
    old.write_text("keep")
    new = tmp_path / "new.txt"
    extra = tmp_path / "extra.txt"
    with pytest.raises(RuntimeError):
        with staged_outputs(str(old), str(new)) as tracked:
            new.write_text("partial")
            old.write_text("changed")
            tracked.append(str(extra))
            extra.write_text("partial")
            raise RuntimeError("boom")
    assert old.exists()
    assert not new.exists()
    assert not extra.exists()


def test_staged_outputs_keep_files_on_success(tmp_path):
    new = tmp_path / "new.txt"
    with staged_outputs(str(new), None) as tracked:
        new.write_text("done")
        assert tracked == [str(new)]
    assert new.read_text() == "done"
