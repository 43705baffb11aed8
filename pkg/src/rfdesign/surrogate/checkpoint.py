"""Versioned binary checkpoints for surrogate and policy networks.

Layout::

    8s   magic
    u32  format version
    u32  length of the JSON header in bytes
    ...  JSON header: {"config": ..., "tensors": [[name, shape, dtype], ...], ...}
    ...  tensor payloads as little-endian float32, in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


class CheckpointError(Exception):
    pass


def save_state(path, magic: bytes, state: dict[str, torch.Tensor], header: dict) -> Path:
    path = Path(path)
    entries, blobs = [], []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        entries.append([name, list(arr.shape), str(arr.dtype)])
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    meta = dict(header)
    meta["tensors"] = entries
    head = json.dumps(meta).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_PREFIX.pack(magic.ljust(8, b"\0"), CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    return path


def load_state(path, magic: bytes) -> tuple[dict, dict[str, torch.Tensor]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated")
    got, version, head_len = _PREFIX.unpack_from(data)
    if got != magic.ljust(8, b"\0"):
        raise CheckpointError(f"{path}: not a {magic.decode()} checkpoint")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} unsupported")
    meta = json.loads(data[_PREFIX.size:_PREFIX.size + head_len])
    offset = _PREFIX.size + head_len
    state = {}
    for name, shape, dtype in meta["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated tensor {name}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.astype(dtype))
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return meta, state


def save_surrogate(model, path) -> Path:
    from .estimator import SurrogateRegressor  # noqa: F401  (type reference)

    model._check_fitted()
    header = {"kind": "surrogate", "params": _jsonable(model.get_params())}
    if hasattr(model, "report_"):
        header["report"] = model.report_.to_json()
    return save_state(path, b"RFSURR", model.model_.state_dict(), header)


def load_surrogate(path):
    from .estimator import SurrogateRegressor, TrainReport

    meta, state = load_state(path, b"RFSURR")
    params = meta["params"]
    params["widths"] = tuple(params["widths"])
    model = SurrogateRegressor(**params).initialize()
    dtype = torch.float64 if model.double else torch.float32
    state = {k: (v.to(dtype) if v.is_floating_point() else v) for k, v in state.items()}
    model.model_.load_state_dict(state)
    model.model_.eval()
    if "report" in meta:
        model.report_ = TrainReport(**meta["report"])
    return model


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out
