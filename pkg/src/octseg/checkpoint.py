"""Binary checkpoint files for model parameters and running statistics.

Layout (all integers little-endian):

    magic      4 bytes  b"OSEG"
    version    u32      currently 1
    n_classes  u32
    filters    u32
    input_ch   u32
    params     u64      trainable scalar count (must match enumeration)
    n_records  u32
    records    repeated:
        name_len  u16, name utf-8 bytes
        kind      u8   0 = trainable parameter, 1 = running-stat buffer
        dtype     u8   0 = float32, 1 = float64
        ndim      u8, dims u32 * ndim
        payload   raw little-endian values

A round trip is bitwise lossless for every parameter and buffer.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import DilatedResidualUNet, ModelConfig

MAGIC = b"OSEG"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(RuntimeError):
    """Malformed, truncated, or inconsistent checkpoint file."""


def _pack_record(name: str, kind: int, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    code = _DTYPE_CODES[np.dtype(arr.dtype)]
    head = struct.pack("<H", len(nb)) + nb
    head += struct.pack("<BBB", kind, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(_DTYPES[code], copy=False).tobytes()
    return head + payload


def save_checkpoint(model: DilatedResidualUNet, path) -> None:
    path = Path(path)
    params = model.parameters()
    buffers = model.buffers()
    count = sum(p.value.size for p in params.values())
    out = bytearray()
    out += MAGIC
    out += struct.pack("<IIII", VERSION, model.config.n_classes,
                       model.config.base_filters, model.config.input_ch)
    out += struct.pack("<QI", count, len(params) + len(buffers))
    for name, p in params.items():
        out += _pack_record(name, 0, p.value)
    for name, buf in buffers.items():
        out += _pack_record(name, 1, buf)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(out))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: {self.path}")
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> DilatedResidualUNet:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"not a checkpoint file (bad magic): {path}")
    version, n_classes, filters, input_ch = r.unpack("<IIII")
    if version != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version} (expected {VERSION})")
    declared_count, n_records = r.unpack("<QI")

    records: dict[str, tuple[int, np.ndarray]] = {}
    for _ in range(n_records):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        kind, dtype_code, ndim = r.unpack("<BBB")
        if dtype_code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {dtype_code} in {path}")
        shape = r.unpack(f"<{ndim}I")
        dtype = _DTYPES[dtype_code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(r.take(n_bytes), dtype=dtype).reshape(shape).copy()
        records[name] = (kind, arr)
    if r.off != len(data):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")

    param_dtype = None
    for kind, arr in records.values():
        if kind == 0:
            param_dtype = arr.dtype.type
            break
    if param_dtype is None:
        raise CheckpointError(f"checkpoint has no parameter records: {path}")

    config = ModelConfig(n_classes=n_classes, base_filters=filters,
                         input_ch=input_ch)
    model = DilatedResidualUNet(config, seed=0, dtype=param_dtype)
    params = model.parameters()
    buffers = model.buffers()

    expected = set(params) | set(buffers)
    got = set(records)
    if expected != got:
        missing = sorted(expected - got)[:3]
        extra = sorted(got - expected)[:3]
        raise CheckpointError(
            f"checkpoint records do not match the architecture "
            f"(missing {missing}, unexpected {extra}): {path}")

    live_count = sum(p.value.size for p in params.values())
    if live_count != declared_count:
        raise CheckpointError(
            f"parameter count mismatch: header says {declared_count}, "
            f"architecture has {live_count}: {path}")

    for name, p in params.items():
        kind, arr = records[name]
        if kind != 0 or arr.shape != p.value.shape:
            raise CheckpointError(f"record {name!r} has wrong kind or shape")
        p.value[...] = arr
    for name, buf in buffers.items():
        kind, arr = records[name]
        if kind != 1 or arr.shape != buf.shape:
            raise CheckpointError(f"record {name!r} has wrong kind or shape")
        buf[...] = arr
    return model
