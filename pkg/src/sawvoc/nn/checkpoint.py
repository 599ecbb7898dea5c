"""Versioned binary checkpoint container.

Layout (little-endian):

    magic  b"SAWC"
    u32    version (currently 1)
    u32    metadata length, then that many bytes of UTF-8 JSON
    u64    optimizer step count
    u8     1 if Adam moments follow each parameter, else 0
    u32    parameter count
    per parameter:
        u16 name length, name bytes
        u8  dtype tag (0 = float32, 1 = float64)
        u8  ndim, then ndim x u32 dims
        raw values; if moments are present, the m and v arrays follow
        back to back with the same shape/dtype

Metadata is free-form JSON; models put their structural fingerprint
(condition width, channel sizes) there so cross-loading incompatible
checkpoints fails with a clear shape error rather than garbage output.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..ioutil import Reader, atomic_write_bytes
from .optim import ParameterStore

MAGIC = b"SAWC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(Exception):
    pass


class CheckpointShapeError(CheckpointError):
    """Checkpoint structure does not match the receiving model."""


@dataclass
class Checkpoint:
    params: dict
    metadata: dict
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def save_checkpoint(path, store: ParameterStore, metadata: dict, include_optimizer=True):
    buf = io.BytesIO()
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<Q", store.step_count))
    buf.write(struct.pack("<B", 1 if include_optimizer else 0))
    buf.write(struct.pack("<I", len(store.params)))
    for name, p in store.params.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(p.data)
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", _DTYPE_TAGS[arr.dtype]))
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
        if include_optimizer:
            buf.write(np.ascontiguousarray(store.m[name], dtype=arr.dtype).tobytes())
            buf.write(np.ascontiguousarray(store.v[name], dtype=arr.dtype).tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        r = Reader(fh.read(), context=str(path))
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = r.unpack("<I")
    metadata = json.loads(r.take(meta_len).decode("utf-8"))
    (step_count,) = r.unpack("<Q")
    (has_opt,) = r.unpack("<B")
    (n_params,) = r.unpack("<I")

    ckpt = Checkpoint(params={}, metadata=metadata, step_count=step_count)
    for _ in range(n_params):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (tag,) = r.unpack("<B")
        if tag not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype tag {tag}")
        dtype = _DTYPES[tag]
        (ndim,) = r.unpack("<B")
        shape = tuple(r.unpack("<" + "I" * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize

        def read_array():
            return np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).copy()

        ckpt.params[name] = read_array()
        if has_opt:
            ckpt.m[name] = read_array()
            ckpt.v[name] = read_array()
    return ckpt


def restore_into(store: ParameterStore, ckpt: Checkpoint):
    """Copy checkpoint values into an existing store, verifying structure."""
    missing = sorted(set(store.params) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(store.params))
    if missing or extra:
        raise CheckpointShapeError(
            f"parameter name mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
        )
    mismatched = [
        f"{name}: model {store.params[name].data.shape} vs checkpoint {ckpt.params[name].shape}"
        for name in store.params
        if store.params[name].data.shape != ckpt.params[name].shape
    ]
    if mismatched:
        raise CheckpointShapeError("shape mismatch: " + "; ".join(mismatched))
    for name, p in store.params.items():
        p.data = ckpt.params[name].astype(p.data.dtype)
        if name in ckpt.m:
            store.m[name] = ckpt.m[name].astype(p.data.dtype)
            store.v[name] = ckpt.v[name].astype(p.data.dtype)
    store.step_count = ckpt.step_count
