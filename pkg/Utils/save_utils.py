# Utils/save_utils.py

import os
import json
import tempfile
from contextlib import contextmanager
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from Core.errors import TableQAError
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2

logger = get_logger()

META_KEY = "__meta__"


# ─── Atomic writes ───

def atomic_write_text(path: str, text: str):
    """Write to a temp file in the target directory, then rename over path."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp_", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_json(path: str, data: Any):
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_jsonl(path: str, records: Iterable[Dict], header: Optional[Dict] = None):
    lines = []
    if header is not None:
        lines.append(json.dumps(header, sort_keys=True))
    lines.extend(json.dumps(r, sort_keys=True) for r in records)
    atomic_write_text(path, "\n".join(lines) + "\n")
    logger.debug_at_level(DEBUG_L1, "SaveUtils", f"Wrote {len(lines)} lines to {path}")


def read_jsonl(path: str, schema: Optional[str] = None) -> Tuple[Optional[Dict], List[Dict]]:
    """
    Returns (header, records). A first line carrying a "schema" key is the
    header; when `schema` is given it must match.
    """
    header, records = None, []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if number == 1 and isinstance(record, dict) and "schema" in record:
                    header = record
                    continue
                records.append(record)
    except OSError as e:
        raise TableQAError(f"Cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise TableQAError(f"Malformed JSON-lines file {path}: {e}") from e
    if schema is not None and (header is None or header.get("schema") != schema):
        found = header.get("schema") if header else None
        raise TableQAError(f"{path}: expected schema '{schema}', found '{found}'")
    return header, records


class JsonlStream:
    """Append-only JSON-lines writer (metrics stream); flushed per record."""

    def __init__(self, path: str, header: Optional[Dict] = None):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.handle = open(path, "w", encoding="utf-8")
        if header is not None:
            self.write(header)

    def write(self, record: Dict):
        self.handle.write(json.dumps(record, sort_keys=True) + "\n")
        self.handle.flush()

    def close(self):
        if not self.handle.closed:
            self.handle.close()


# ─── Checkpoints ───

def save_checkpoint_npz(filepath: str, arrays: Dict[str, np.ndarray], meta: Dict) -> bool:
    """
    Save parameter arrays plus a JSON metadata entry into a compressed .npz file.

    Returns:
        bool: Success status
    """
    if META_KEY in arrays:
        logger.error("SaveUtils", f"Parameter name collides with reserved key {META_KEY}")
        return False
    try:
        directory = os.path.dirname(os.path.abspath(filepath))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp_", suffix=".npz", dir=directory)
        os.close(fd)
        payload = dict(arrays)
        payload[META_KEY] = np.array(json.dumps(meta, sort_keys=True))
        np.savez_compressed(tmp, **payload)
        os.replace(tmp, filepath)

        logger.debug_at_level(DEBUG_L1, "SaveUtils", f"Saved checkpoint to {filepath}")
        logger.debug_at_level(DEBUG_L2, "SaveUtils", f"- {len(arrays)} arrays, "
                                                     f"{sum(a.size for a in arrays.values())} values")
        return True
    except Exception as e:
        logger.error("SaveUtils", f"Error saving checkpoint to {filepath}: {e}")
        for key, value in arrays.items():
            logger.debug_at_level(DEBUG_L2, "SaveUtils", f"- {key}: shape={getattr(value, 'shape', None)}")
        if "tmp" in locals() and os.path.exists(tmp):
            os.remove(tmp)
        return False


def load_checkpoint_npz(filepath: str) -> Tuple[Dict[str, np.ndarray], Dict]:
    try:
        with np.load(filepath, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files if k != META_KEY}
            if META_KEY not in data.files:
                raise TableQAError(f"{filepath} has no metadata entry")
            meta = json.loads(str(data[META_KEY]))
    except (OSError, ValueError) as e:
        raise TableQAError(f"Cannot load checkpoint {filepath}: {e}") from e
    return arrays, meta


# ─── Staged outputs ───

@contextmanager
def staged_outputs(*paths: str) -> Iterator[List[str]]:
    """
    Track output paths of a command; on any exception every tracked path that
    did not exist before is removed. Callers may append more paths to the
    yielded list.
    """
    tracked = [p for p in paths if p]
    existed = {p: os.path.exists(p) for p in tracked}
    try:
        yield tracked
    except BaseException:
        for path in tracked:
            if existed.get(path, False) or not os.path.exists(path):
                continue
            try:
                os.remove(path)
                logger.warning("SaveUtils", f"Removed partial output {path}")
            except OSError as e:
                logger.error("SaveUtils", f"Could not remove partial output {path}: {e}")
        raise
