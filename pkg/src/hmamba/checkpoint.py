"""Binary checkpoint container: magic, JSON header, raw little-endian float64 tensors."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, FormatError
from .model import ModelConfig, ModelState

MAGIC = b"HMAMBACK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")  # magic, version, header byte length


def checkpoint_bytes(state: ModelState, meta: dict | None = None) -> bytes:
    """Serialize deterministically: tensors in sorted name order, sorted JSON keys."""
    tensors, offset, chunks = [], 0, []
    for name in sorted(state.params):
        arr = np.asarray(state.params[name], dtype="<f8")  # keeps 0-d shapes
        raw = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"config": state.config.to_dict(), "tensors": tensors, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def save_checkpoint(state: ModelState, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(state, meta))


def parse_checkpoint(blob: bytes) -> tuple[ModelState, dict]:
    if len(blob) < _PREFIX.size:
        raise FormatError("truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError("not an hmamba checkpoint (bad magic)")
    if version != VERSION:
        raise CompatibilityError(f"checkpoint version {version} unsupported (expected {VERSION})")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    body = blob[start + hlen:]
    params = {}
    for t in header["tensors"]:
        end = t["offset"] + t["nbytes"]
        if end > len(body):
            raise FormatError(f"tensor {t['name']!r} runs past the end of the file")
        arr = np.frombuffer(body[t["offset"]:end], dtype="<f8").reshape(t["shape"])
        params[t["name"]] = arr.astype(np.float64, copy=True)
    config = ModelConfig.from_dict(header["config"])
    expected = ModelState.initialize(config, 0).params
    for name, ref in expected.items():
        if name not in params or params[name].shape != ref.shape:
            got = None if name not in params else params[name].shape
            raise CompatibilityError(f"tensor {name!r}: expected shape {ref.shape}, found {got}")
    return ModelState(config, params), header.get("meta", {})


def load_checkpoint(path) -> tuple[ModelState, dict]:
    return parse_checkpoint(Path(path).read_bytes())
