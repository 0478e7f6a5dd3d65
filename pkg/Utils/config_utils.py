# Utils/config_utils.py

import os
import json
from dataclasses import dataclass, asdict, fields
from typing import Any, Dict, Optional

from Core.errors import ConfigError
from Core.synth_tasks import GeneratorConfig
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2

logger = get_logger()

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(PROJECT_ROOT, "Config")
PRESET_DIR = os.path.join(CONFIG_DIR, "Presets")
# Short grid names accepted by `ablate --grid`
PRESET_ALIASES = {"table4": "aux_losses", "table5": "fusion"}
SEED_ENV_VAR = "TABLEQA_SEED"
FALLBACK_SEED = 7

# ─── Editable Fields ───
FIELDS = [
    {"key": "epochs",              "desc": "Training epochs",                        "type": int},
    {"key": "batch_size",          "desc": "Batch size B",                           "type": int},
    {"key": "lr",                  "desc": "Learning rate",                          "type": float},
    {"key": "weight_decay",        "desc": "Decoupled weight decay",                 "type": float},
    {"key": "optimizer",           "desc": "Optimizer (adamw | adam | sgd)",         "type": str},
    {"key": "scheduler",           "desc": "LR schedule (cosine | constant)",        "type": str},
    {"key": "lambda_clu",          "desc": "Clustering loss weight",                 "type": float},
    {"key": "lambda_sep",          "desc": "Separation loss weight",                 "type": float},
    {"key": "lambda_sparse",       "desc": "Sparsification loss weight",             "type": float},
    {"key": "lambda_uns",          "desc": "Fusion weight of URS scores",            "type": float},
    {"key": "lambda_cell",         "desc": "Fusion weight of cell scores",           "type": float},
    {"key": "seed",                "desc": "Random seed",                            "type": int},
    {"key": "eval_interval",       "desc": "Evaluate every N epochs (0 = off)",      "type": int},
    {"key": "checkpoint",          "desc": "Checkpoint path",                        "type": str},
    {"key": "d_model",             "desc": "Hidden size d",                          "type": int},
    {"key": "n_heads",             "desc": "Attention heads",                        "type": int},
    {"key": "n_enc_layers",        "desc": "Encoder layers",                         "type": int},
    {"key": "n_dec_layers",        "desc": "Decoder layers",                         "type": int},
    {"key": "d_ff",                "desc": "Feed-forward size (0 = 4d)",             "type": int},
    {"key": "use_positions",       "desc": "Sinusoidal positions",                   "type": bool},
    {"key": "max_answer_len",      "desc": "Max generated answer tokens",            "type": int},
    {"key": "beam_size",           "desc": "Beam width (1 = greedy)",                "type": int},
    {"key": "grad_clip",           "desc": "Gradient norm clip (0 = off)",           "type": float},
    {"key": "freeze_urs",          "desc": "Freeze relevance scorer parameters",     "type": bool},
    {"key": "relevance_source",    "desc": "Relevance scores (urs | overlap | none)", "type": str},
    {"key": "highlight_source",    "desc": "Highlighter input (statement | question | none)", "type": str},
    {"key": "statement_as_input",  "desc": "Append parsing statement to question",   "type": bool},
    {"key": "max_steps",           "desc": "Stop after N steps (0 = no limit)",      "type": int},
    {"key": "dtype",               "desc": "Floating point (float32 | float64)",     "type": str},
    {"key": "divergence_factor",   "desc": "Divergence threshold x initial loss",    "type": float},
    {"key": "divergence_patience", "desc": "Steps above threshold before abort",     "type": int},
]
FIELD_TYPES = {f["key"]: f["type"] for f in FIELDS}

OPTIMIZERS = ("adamw", "adam", "sgd")
SCHEDULERS = ("cosine", "constant")
DTYPES = ("float32", "float64")


def default_seed() -> int:
    value = os.environ.get(SEED_ENV_VAR)
    if value is None:
        return FALLBACK_SEED
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {value!r}") from None


# ─── Get Default Config ───
def get_default_config():
    config = {
        "epochs": 20,
        "batch_size": 32,
        "lr": 3e-4,
        "weight_decay": 0.01,
        "optimizer": "adamw",
        "scheduler": "cosine",
        "lambda_clu": 1.0,
        "lambda_sep": 1.0,
        "lambda_sparse": 1.0,
        "lambda_uns": 0.7,
        "lambda_cell": 0.3,
        "seed": default_seed(),
        "eval_interval": 0,
        "checkpoint": "checkpoints/model.npz",
        "d_model": 64,
        "n_heads": 2,
        "n_enc_layers": 2,
        "n_dec_layers": 2,
        "d_ff": 0,
        "use_positions": True,
        "max_answer_len": 16,
        "beam_size": 1,
        "grad_clip": 1.0,
        "freeze_urs": False,
        "relevance_source": "urs",
        "highlight_source": "statement",
        "statement_as_input": False,
        "max_steps": 0,
        "dtype": "float32",
        "divergence_factor": 10.0,
        "divergence_patience": 100,
    }
    return load_settings(config)


def load_settings(config, path: Optional[str] = None):
    """
    Overlay Config/settings.json (or `path`) onto config. Unknown keys are
    ignored with a warning; the seed only comes from the file when the
    environment does not set one.
    """
    path = path or os.path.join(CONFIG_DIR, "settings.json")
    if not os.path.exists(path):
        return config
    try:
        with open(path, "r") as f:
            saved = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read settings {path}: {e}") from e
    for key, value in saved.items():
        if key not in FIELD_TYPES:
            logger.warning("Config", f"Ignoring unknown setting '{key}' in {path}")
            continue
        if key == "seed" and SEED_ENV_VAR in os.environ:
            continue
        config[key] = coerce(key, value)
    logger.debug_at_level(DEBUG_L2, "Config", f"Loaded settings from {path}")
    return config


def coerce(key: str, value: Any):
    """Convert a raw value (JSON or text) to the FIELDS type of key."""
    kind = FIELD_TYPES.get(key)
    if kind is None:
        raise ConfigError(f"Unknown config key '{key}'")
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int:
            as_float = float(value)
            if not as_float.is_integer():
                raise ValueError(value)
            return int(as_float)
        if kind is float:
            return float(value)
        return str(value).strip().strip('"').strip("'")
    except (TypeError, ValueError):
        raise ConfigError(f"Invalid value for '{key}': {value!r} (expected {kind.__name__})") from None


def parse_flat_config(text: str, source: str = "<config>") -> Dict[str, Any]:
    """
    Parse `key = value` lines (also `key: value`); '#' starts a comment,
    [section] headers are ignored.
    """
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split(sep, 1))
        values[key] = coerce(key, value)
    return values


def load_flat_config(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_flat_config(f.read(), source=path)
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 3e-4
    weight_decay: float = 0.01
    optimizer: str = "adamw"
    scheduler: str = "cosine"
    lambda_clu: float = 1.0
    lambda_sep: float = 1.0
    lambda_sparse: float = 1.0
    lambda_uns: float = 0.7
    lambda_cell: float = 0.3
    seed: int = FALLBACK_SEED
    eval_interval: int = 0
    checkpoint: str = "checkpoints/model.npz"
    d_model: int = 64
    n_heads: int = 2
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 0
    use_positions: bool = True
    max_answer_len: int = 16
    beam_size: int = 1
    grad_clip: float = 1.0
    freeze_urs: bool = False
    relevance_source: str = "urs"
    highlight_source: str = "statement"
    statement_as_input: bool = False
    max_steps: int = 0
    dtype: str = "float32"
    divergence_factor: float = 10.0
    divergence_patience: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("lambda_clu", "lambda_sep", "lambda_sparse", "lambda_uns", "lambda_cell",
                     "lr", "weight_decay", "grad_clip"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("batch_size", "d_model", "n_heads", "beam_size", "divergence_patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("epochs", "eval_interval", "max_steps", "d_ff", "max_answer_len",
                     "n_enc_layers", "n_dec_layers"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        choices = {
            "optimizer": OPTIMIZERS,
            "scheduler": SCHEDULERS,
            "dtype": DTYPES,
            "relevance_source": ("urs", "overlap", "none"),
            "highlight_source": ("statement", "question", "none"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.divergence_factor <= 1:
            raise ConfigError(f"divergence_factor must be > 1, got {self.divergence_factor}")

    @property
    def uses_auxiliary_losses(self) -> bool:
        return self.relevance_source == "urs" and (self.lambda_clu + self.lambda_sep + self.lambda_sparse) > 0

    def with_overrides(self, **overrides) -> "TrainConfig":
        data = self.to_dict()
        for key, value in overrides.items():
            data[key] = coerce(key, value)
        return TrainConfig(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown training config keys: {unknown}")
        return cls(**{k: coerce(k, v) for k, v in data.items()})


def load_train_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """defaults <- Config/settings.json <- flat config file <- CLI overrides."""
    config = get_default_config()
    if path:
        config.update(load_flat_config(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            config[key] = coerce(key, value)
    cfg = TrainConfig.from_dict(config)
    logger.debug_at_level(DEBUG_L1, "Config", f"Training config: {cfg.to_dict()}")
    return cfg


def load_generator_config(path: Optional[str] = None, seed: Optional[int] = None) -> GeneratorConfig:
    path = path or os.path.join(CONFIG_DIR, "generator.json")
    data = {}
    if os.path.exists(path):
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read generator config {path}: {e}") from e
    data.setdefault("seed", default_seed())
    if seed is not None:
        data["seed"] = seed
    try:
        cfg = GeneratorConfig.from_dict(data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid generator config {path}: {e}") from e
    cfg.validate()
    return cfg


def load_preset(name: str) -> Dict[str, Any]:
    """Ablation grid preset from Config/Presets/<name>.json (or a direct path); PRESET_ALIASES resolve first."""
    name = PRESET_ALIASES.get(name, name)
    path = name if os.path.exists(name) else os.path.join(PRESET_DIR, f"{name}.json")
    if not os.path.exists(path):
        available = sorted(os.path.splitext(p)[0] for p in os.listdir(PRESET_DIR)) if os.path.isdir(PRESET_DIR) else []
        raise ConfigError(f"Unknown grid preset '{name}'. Available: {available} (aliases {sorted(PRESET_ALIASES)})")
    try:
        with open(path, "r") as f:
            preset = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read preset {path}: {e}") from e
    if not isinstance(preset.get("rows"), list) or not preset["rows"]:
        raise ConfigError(f"Preset {path} has no rows")
    for row in preset["rows"]:
        for key, value in row.get("overrides", {}).items():
            coerce(key, value)
    return preset
