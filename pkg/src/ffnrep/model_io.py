"""Bit-exact ``.rpwt`` weight files and JSON config files.

Layout (all integers little-endian)::

    b"RPWT"  u32 version
    u32 config_len   config_len bytes of UTF-8 JSON (ModelConfig)
    u32 tensor_count
    per tensor:  u32 name_len, name (UTF-8), u8 dtype (0=f32, 1=f64),
                 u32 rank, rank x u64 dims, raw payload
    u32 flag_count
    per flag:    u32 name_len, name (UTF-8), u8 frozen

Flags carry the ``frozen`` state of each BatchNorm, keyed by its prefix
(``blocks.3.ffn.bn1``).
"""

from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict

import numpy as np

from .config import config_from_dict, load_config, save_config
from .errors import CorruptionError, FormatError, VersionError
from .initializers import init_weights
from .model import Model, frozen_flags, model_from_state, model_state

__all__ = [
    "MAGIC",
    "VERSION",
    "decode_model",
    "encode_model",
    "init_weights",
    "load_config",
    "load_model",
    "models_identical",
    "save_config",
    "save_model",
]

MAGIC = b"RPWT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode_model(model: Model) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(_pack_str(model.cfg.to_json()))
    state = model_state(model)
    parts.append(struct.pack("<I", len(state)))
    for name, arr in state.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise FormatError(f"{name}: unsupported dtype {arr.dtype}")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<BI", _TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    flags = frozen_flags(model)
    parts.append(struct.pack("<I", len(flags)))
    for key, val in flags.items():
        parts.append(_pack_str(key))
        parts.append(struct.pack("<B", 1 if val else 0))
    return b"".join(parts)


def save_model(model: Model, path) -> None:
    data = encode_model(model)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.buf):
            raise CorruptionError(f"truncated file while reading {what}", offset=self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def string(self, what: str) -> str:
        (n,) = self.unpack("<I", f"{what} length")
        raw = self.take(n, what)
        try:
            return bytes(raw).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptionError(f"{what} is not valid UTF-8", offset=self.pos - n) from exc


def decode_model(data: bytes) -> Model:
    r = _Reader(data)
    if len(data) < 4 or bytes(r.take(4, "magic")) != MAGIC:
        raise FormatError("not an RPWT weight file (bad magic)")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionError(f"unsupported RPWT version {version} (this reader knows {VERSION})")
    try:
        cfg = config_from_dict(json.loads(r.string("config")))
    except json.JSONDecodeError as exc:
        raise CorruptionError("config JSON does not parse", offset=r.pos) from exc
    (count,) = r.unpack("<I", "tensor count")
    state: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        start = r.pos
        name = r.string("tensor name")
        if name in state:
            raise CorruptionError(f"duplicate tensor name {name!r}", offset=start)
        tag, rank = r.unpack("<BI", f"{name} header")
        if tag not in _DTYPES:
            raise CorruptionError(f"{name}: unknown dtype tag {tag}", offset=r.pos - 5)
        dims = r.unpack(f"<{rank}Q", f"{name} dims")
        dt = _DTYPES[tag]
        n = 1
        for d in dims:
            n *= d
        payload = r.take(n * dt.itemsize, f"{name} payload")
        arr = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="), copy=True)
        state[name] = arr
    (nflags,) = r.unpack("<I", "flag count")
    flags = {}
    for _ in range(nflags):
        key = r.string("flag name")
        (val,) = r.unpack("<B", f"{key} flag")
        flags[key] = bool(val)
    if r.pos != len(data):
        raise CorruptionError(f"{len(data) - r.pos} trailing bytes after the last section", offset=r.pos)
    try:
        return model_from_state(cfg, state, flags)
    except ValueError as exc:
        raise CorruptionError(f"tensors do not match the stored config: {exc}") from exc


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        return decode_model(fh.read())


def models_identical(a: Model, b: Model) -> bool:
    """True when config, frozen flags, and every tensor match bit for bit."""
    if a.cfg != b.cfg or frozen_flags(a) != frozen_flags(b):
        return False
    sa, sb = model_state(a), model_state(b)
    if list(sa) != list(sb):
        return False
    for k in sa:
        x, y = np.asarray(sa[k]), np.asarray(sb[k])
        if x.dtype != y.dtype or x.shape != y.shape or x.tobytes() != y.tobytes():
            return False
    return True
