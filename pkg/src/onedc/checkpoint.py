"""Byte-stable checkpoint container.

A checkpoint is a JSON manifest (sorted keys) plus raw little-endian tensor
buffers, so loading and re-saving the same state produces identical bytes.
Stores named weight groups, optimizer state, counters, gate metrics, and the
config hash.

Layout: magic "ODCK" | u32 version | u64 manifest length | manifest JSON |
concatenated buffers in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .errors import OnedcError

MAGIC = b"ODCK"
VERSION = 1

_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
    "int32": np.int32,
    "uint8": np.uint8,
    "bool": np.bool_,
}


def _flatten(prefix: str, obj: Any, tensors: dict[str, np.ndarray], meta: dict) -> None:
    if isinstance(obj, torch.Tensor):
        arr = obj.detach().cpu().numpy()
        if arr.dtype.name not in _DTYPES:
            arr = arr.astype(np.float32)
        tensors[prefix] = arr
    elif isinstance(obj, np.ndarray):
        tensors[prefix] = obj
    elif isinstance(obj, dict):
        meta_here = {}
        for key in obj:
            _flatten(f"{prefix}/{key}", obj[key], tensors, meta_here)
        if meta_here:
            meta[prefix] = meta_here
    else:
        meta[prefix] = obj


def save_checkpoint(path: str | Path, groups: dict[str, Any], meta: dict[str, Any]) -> None:
    """Persist named tensor groups (state dicts / optimizer states) plus
    JSON-serializable metadata."""
    tensors: dict[str, np.ndarray] = {}
    extra_meta: dict[str, Any] = {}
    for name, group in groups.items():
        _flatten(name, group, tensors, extra_meta)

    entries = []
    offset = 0
    buffers = []
    for key in sorted(tensors):
        arr = np.ascontiguousarray(tensors[key])
        if arr.dtype == np.bool_:
            arr = arr.astype(np.uint8)
            dtype = "bool"
        else:
            dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise OnedcError(f"cannot serialize dtype {dtype} for {key}")
        raw = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        entries.append(
            {"key": key, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        buffers.append(raw)
        offset += len(raw)

    manifest = json.dumps(
        {"meta": meta, "scalars": extra_meta, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(">IQ", VERSION, len(manifest)))
        fh.write(manifest)
        for raw in buffers:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> tuple[dict[str, Any], dict[str, Any]]:
    """Returns (groups, meta). Tensor groups come back as nested dicts of
    torch tensors keyed exactly as saved."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise OnedcError(f"{path} is not a checkpoint file")
    version, manifest_len = struct.unpack_from(">IQ", data, 4)
    if version != VERSION:
        raise OnedcError(f"unknown checkpoint version {version}")
    manifest = json.loads(data[16 : 16 + manifest_len].decode("utf-8"))
    base = 16 + manifest_len

    groups: dict[str, Any] = {}

    def insert(key: str, value: Any) -> None:
        parts = key.split("/")
        node = groups
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value

    for entry in manifest["tensors"]:
        raw = data[base + entry["offset"] : base + entry["offset"] + entry["nbytes"]]
        np_dtype = _DTYPES[entry["dtype"]]
        arr = np.frombuffer(raw, dtype=np.dtype(np_dtype).newbyteorder("<"))
        arr = arr.reshape(entry["shape"]).astype(np_dtype)
        if entry["dtype"] == "bool":
            arr = arr.astype(np.bool_)
        insert(entry["key"], torch.from_numpy(arr.copy()))

    def insert_scalars(tree: dict, node: dict) -> None:
        for key, value in tree.items():
            if isinstance(value, dict):
                insert_scalars(value, node)
            else:
                insert(key, value)

    insert_scalars(manifest["scalars"], groups)
    return groups, manifest["meta"]


def state_to_module(module: torch.nn.Module, state: dict[str, Any]) -> None:
    """Load a nested state group back into a module."""
    flat = {}

    def walk(prefix: str, node: Any):
        if isinstance(node, dict):
            for k, v in node.items():
                walk(f"{prefix}.{k}" if prefix else k, v)
        else:
            flat[prefix] = node

    walk("", state)
    module.load_state_dict(flat)


def module_state(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {k: v for k, v in module.state_dict().items()}
