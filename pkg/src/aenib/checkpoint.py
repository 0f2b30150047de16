"""Deterministic checkpoint container.

A checkpoint is a single file: magic, a little-endian header length, a
canonical JSON header (sorted keys), and the raw array payloads concatenated
in header order. No timestamps or environment state are written, so
save -> load -> save round-trips byte-exactly. Loading refuses a mismatched
config hash unless explicitly overridden.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

__all__ = ["FORMAT_VERSION", "save_checkpoint", "load_checkpoint",
           "LoadedCheckpoint", "config_hash_of"]

MAGIC = b"AENIBCKPT\n"
FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash_of(config_dict: dict) -> str:
    return hashlib.sha256(canonical_json(config_dict).encode()).hexdigest()[:16]


def save_checkpoint(path, *, arrays: dict[str, np.ndarray], step: int,
                    seed: int, config: dict, extra_meta: dict | None = None):
    """Write arrays plus run metadata; `config` is embedded whole so the model
    can be rebuilt from the checkpoint alone."""
    names = sorted(arrays)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.tobytes()
        entries.append({"name": name, "dtype": str(arr.dtype),
                        "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "seed": int(seed),
        "config_hash": config_hash_of(config),
        "config": config,
        "arrays": entries,
        "meta": extra_meta or {},
    }
    header_bytes = canonical_json(header).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


@dataclass
class LoadedCheckpoint:
    step: int
    seed: int
    config_hash: str
    config: dict
    arrays: dict[str, np.ndarray]
    meta: dict


def load_checkpoint(path, expected_config: dict | None = None,
                    override: bool = False) -> LoadedCheckpoint:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise ConfigurationError(f"{path}: not a checkpoint file")
    off = len(MAGIC)
    hlen = int.from_bytes(raw[off:off + 8], "little")
    off += 8
    header = json.loads(raw[off:off + hlen])
    off += hlen
    if header["format_version"] != FORMAT_VERSION:
        raise ConfigurationError(
            f"{path}: format version {header['format_version']} != {FORMAT_VERSION}")
    if expected_config is not None and not override:
        want = config_hash_of(expected_config)
        if want != header["config_hash"]:
            raise ConfigurationError(
                f"{path}: checkpoint config hash {header['config_hash']} does not match "
                f"the provided config ({want}); pass override to load anyway")
    arrays = {}
    for ent in header["arrays"]:
        start = off + ent["offset"]
        buf = raw[start:start + ent["nbytes"]]
        arrays[ent["name"]] = np.frombuffer(buf, dtype=np.dtype(ent["dtype"])).reshape(
            ent["shape"]).copy()
    return LoadedCheckpoint(step=header["step"], seed=header["seed"],
                            config_hash=header["config_hash"], config=header["config"],
                            arrays=arrays, meta=header["meta"])
