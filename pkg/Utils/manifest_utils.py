# Utils/manifest_utils.py

"""
Run manifests: one JSON document per CLI invocation recording what went in
(command, config hash, dataset hashes, seed, code version) and what came out.
"""
import os
import sys
import json
import time
import hashlib
import platform
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional

import numpy as np
import psutil
import torch

from Utils.config_utils import PROJECT_ROOT
from Utils.log_utils import get_logger, DEBUG_L1
from Utils.save_utils import write_json

logger = get_logger()

MANIFEST_SCHEMA = "tableqa-manifest"
MANIFEST_VERSION = 1
_SOURCE_DIRS = ("Core", "Managers", "Utils", "Tools")


def hash_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_config(config: Dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode("utf-8")).hexdigest()


def code_version(root: str = PROJECT_ROOT) -> str:
    """sha256 over the package's .py sources, in sorted path order."""
    digest = hashlib.sha256()
    paths = [os.path.join(root, "main.py")]
    for directory in _SOURCE_DIRS:
        for base, _, files in os.walk(os.path.join(root, directory)):
            paths.extend(os.path.join(base, name) for name in files if name.endswith(".py"))
    for path in sorted(p for p in paths if os.path.exists(p)):
        digest.update(os.path.relpath(path, root).encode("utf-8"))
        with open(path, "rb") as f:
            digest.update(f.read())
    return digest.hexdigest()[:16]


def host_info() -> Dict:
    memory = psutil.virtual_memory()
    return {
        "platform": platform.platform(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "torch": torch.__version__,
        "cpu_count": psutil.cpu_count(),
        "memory_total_gb": round(memory.total / 1024 ** 3, 2),
    }


@dataclass
class RunManifest:
    command: str
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    dataset_hashes: Dict[str, str] = field(default_factory=dict)
    code_version: str = ""
    started_at: float = field(default_factory=time.time)
    wall_clock_s: float = 0.0
    outputs: List[str] = field(default_factory=list)
    arguments: Dict = field(default_factory=dict)
    status: str = "running"
    host: Dict = field(default_factory=dict)

    @classmethod
    def start(cls, command: str, arguments: Dict, seed: Optional[int] = None) -> "RunManifest":
        return cls(command=command, seed=seed, arguments=arguments,
                   code_version=code_version(), host=host_info())

    def add_dataset(self, path: str):
        if path and os.path.exists(path):
            self.dataset_hashes[os.path.basename(path)] = hash_file(path)

    def set_config(self, config: Dict):
        self.config_hash = hash_config(config)

    def add_output(self, path: str):
        if path and path not in self.outputs:
            self.outputs.append(path)

    def finish(self, path: str, status: str = "ok") -> str:
        self.status = status
        self.wall_clock_s = round(time.time() - self.started_at, 3)
        data = {"schema": MANIFEST_SCHEMA, "version": MANIFEST_VERSION, **asdict(self)}
        write_json(path, data)
        logger.debug_at_level(DEBUG_L1, "Manifest", f"Wrote manifest {path} ({status}, {self.wall_clock_s}s)")
        return path
