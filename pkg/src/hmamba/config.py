"""Run configuration: flat dotted keys in TOML, defaults, overrides and snapshots.

Every key lives in :data:`DEFAULTS`; a config file may set any subset of them
and command-line flags override the file. The resolved mapping is written next
to run outputs and is sufficient to rerun the command.
"""

from __future__ import annotations

import json
import math
import os
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import ModelConfig

CONFIG_VERSION = 1
OUTPUT_ROOT_ENV = "HMAMBA_OUTPUT_ROOT"

# desk-scale defaults; batch 2048 is the usual choice on full-size datasets
DEFAULTS: dict[str, object] = {
    "config_version": CONFIG_VERSION,
    "seed": 7,
    "data.path": "",
    "data.format": "csv",
    "data.min_user_len": 3,
    "data.min_item_count": 1,
    "model.variant": "full",
    "model.d": 32,
    "model.d_state": 32,
    "model.expand": 2,
    "model.conv_width": 2,
    "model.n_layers": 1,
    "model.k": 1.0,
    "model.dropout": 0.1,
    "model.max_seq_len": 50,
    "model.init_std": 0.1,
    "model.delta_init": 0.01,
    "model.eps_arcosh": 1e-12,
    "model.eps_norm": 1e-12,
    "train.epochs": 50,
    "train.batch_size": 128,
    "train.optimizer": "adam",
    "train.lr": 1e-3,
    "train.clip_norm": 5.0,  # 0 disables clipping
    "train.record_timing": False,
    "eval.ks": [10],
    "eval.split": "test",
    "eval.exclude_history": False,
    "eval.buckets": [],
    "eval.table": False,
    "bench.variants": ["full", "half", "euclidean"],
    "bench.lengths": [256, 512, 1024, 2048, 4096, 8192],
    "bench.warmup": 3,
    "bench.reps": 10,
    "bench.d": 16,
    "bench.d_state": 16,
    "bench.vocab_size": 1001,
    "output.dir": "runs",
}


class ConfigError(ValueError):
    """Unknown key or a value of the wrong type (a usage error)."""


def flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, full + "."))
        else:
            flat[full] = value
    return flat


def _coerce(key: str, value):
    ref = DEFAULTS[key]
    if isinstance(ref, bool):
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} expects a boolean, got {value!r}")
    try:
        if isinstance(ref, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(ref, float):
            return float(value)
        if isinstance(ref, list):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            inner = type(ref[0]) if ref else int
            return [inner(v.strip() if isinstance(v, str) else v) for v in value]
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot interpret {value!r}") from exc


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- config file <- overrides (``None`` override values are ignored)."""
    cfg = dict(DEFAULTS)
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = _coerce(key, value)
    if cfg["config_version"] != CONFIG_VERSION:
        raise ConfigError(f"config_version {cfg['config_version']} unsupported")
    return cfg


def load_config(path) -> dict:
    """Read a TOML config and return its flat dotted-key mapping (not yet resolved)."""
    try:
        with Path(path).open("rb") as fh:
            tree = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return flatten(tree)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ConfigError("non-finite float in config")
        return repr(value)
    if isinstance(value, (int,)):
        return str(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return json.dumps(str(value))


def dumps(cfg: dict) -> str:
    """Flat ``key = value`` TOML, keys sorted, so snapshots are byte-stable."""
    return "".join(f"{key} = {_toml_value(cfg[key])}\n" for key in sorted(cfg))


def write_snapshot(cfg: dict, path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")


def model_config(cfg: dict, vocab_size: int, variant: str | None = None) -> ModelConfig:
    values = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("model.")}
    if variant is not None:
        values["variant"] = variant
    return ModelConfig(vocab_size=vocab_size, **values)


def output_dir(cfg: dict) -> Path:
    """``output.dir``, relative paths taken under ``$HMAMBA_OUTPUT_ROOT`` when set."""
    out = Path(cfg["output.dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out
