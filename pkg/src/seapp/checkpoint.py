"""Versioned binary model files.

Layout (little-endian)::

    b"SEAPPMDL"            8-byte magic
    uint16 version
    uint32 header length   followed by a UTF-8 JSON header
    float64 buffers        one per tensor, in header order

The header holds the encoder config, task, target scale and a list of
``{"name", "shape"}`` entries.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import NormStats
from .encoder import EncoderConfig, EncoderParams
from .tensor import parameter
from .training import Model

MAGIC = b"SEAPPMDL"
VERSION = 1

__all__ = ["MAGIC", "VERSION", "CheckpointError", "save_model", "load_model"]


class CheckpointError(ValueError):
    pass


def save_model(model: Model, path) -> None:
    cfg = model.config
    header = {
        "config": {
            "n_sensors": cfg.n_sensors,
            "window_len": cfg.window_len,
            "patch": cfg.patch,
            "n_branches": cfg.n_branches,
            "hidden": cfg.hidden,
            "n_outputs": cfg.n_outputs,
        },
        "task": model.task,
        "target_scale": model.target_scale,
        "tensors": [{"name": k, "shape": list(t.shape)} for k, t in model.params.items()],
    }
    if model.stats is not None:
        header["norm"] = {"mean": model.stats.mean.tolist(), "std": model.stats.std.tolist()}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(blob)))
        fh.write(blob)
        for t in model.params:
            fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())


def load_model(path) -> Model:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a model file")
    version, hlen = struct.unpack_from("<HI", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported model version {version}")
    pos = 8 + struct.calcsize("<HI")
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = pos + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(data[pos:end], dtype="<f8").reshape(shape)
        tensors[entry["name"]] = parameter(arr.astype(np.float64))
        pos = end
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    params = EncoderParams(EncoderConfig(**header["config"]), tensors)
    stats = None
    if "norm" in header:
        stats = NormStats(np.array(header["norm"]["mean"]), np.array(header["norm"]["std"]))
    return Model(params, header["task"], float(header["target_scale"]), stats)
