"""Checkpoint container: named little-endian arrays behind a JSON header.

Layout::

    bytes 0..7    magic  b"HZMXCKPT"
    bytes 8..15   header length (uint64, little-endian)
    header        UTF-8 JSON: {"version", "meta", "arrays": [
                      {"name", "dtype", "shape", "offset"}, ...]}
    data          raw array bytes at the stated offsets (relative to the
                  end of the header), little-endian

Save -> load -> save is byte-identical: array order, meta, and offsets all
round-trip through the header, and the JSON is dumped with sorted keys and
fixed separators.
"""

import json
import struct
from dataclasses import asdict

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .errors import CheckpointFormatError
from .heads import BinGrid
from .policy import ModelConfig, Normalization, Policy

MAGIC = b"HZMXCKPT"
VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr)
        le = data.dtype.newbyteorder("<")
        blob = data.astype(le, copy=False).tobytes()
        entries.append({"name": name, "dtype": le.str,
                        "shape": list(data.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"version": VERSION, "meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path):
    """Returns (arrays dict in file order, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header") from exc
    if header.get("version") != VERSION:
        raise CheckpointFormatError(
            f"{path}: format version {header.get('version')} is not "
            f"supported (expected {VERSION})")
    base = 16 + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        flat = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
        arrays[entry["name"]] = flat.reshape(shape).copy()
    return arrays, header["meta"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_policy(path, policy: Policy, train: TrainConfig, iteration: int,
                rng_state: dict | None = None) -> None:
    arrays = {f"param.{name}": policy.params[name].data
              for name in sorted(policy.params)}
    arrays["norm.obs_mean"] = policy.norm.obs_mean
    arrays["norm.obs_std"] = policy.norm.obs_std
    arrays["norm.act_mean"] = policy.norm.act_mean
    arrays["norm.act_std"] = policy.norm.act_std
    if policy.grid is not None:
        arrays["grid.lo"] = np.asarray(policy.grid.lo, dtype=np.float64)
        arrays["grid.hi"] = np.asarray(policy.grid.hi, dtype=np.float64)
    meta = {
        "train": _jsonable(asdict(train)),
        "iteration": int(iteration),
        "rng_state": _jsonable(rng_state) if rng_state is not None else None,
        "has_grid": policy.grid is not None,
    }
    save_arrays(path, arrays, meta)


def load_policy(path):
    """Returns (policy, train config, meta dict)."""
    arrays, meta = load_arrays(path)
    train_dict = dict(meta["train"])
    model = ModelConfig(**train_dict.pop("model"))
    train = TrainConfig(model=model, **train_dict)
    params = {name[len("param."):]: T.param(arr)
              for name, arr in arrays.items() if name.startswith("param.")}
    norm = Normalization(obs_mean=arrays["norm.obs_mean"],
                         obs_std=arrays["norm.obs_std"],
                         act_mean=arrays["norm.act_mean"],
                         act_std=arrays["norm.act_std"])
    grid = None
    if meta.get("has_grid"):
        grid = BinGrid(lo=tuple(arrays["grid.lo"].tolist()),
                       hi=tuple(arrays["grid.hi"].tolist()),
                       bins=model.bins)
    policy = Policy(model, params, norm, grid)
    return policy, train, meta
