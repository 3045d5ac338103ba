"""Binary checkpoints: named parameter blobs with an embedded config echo.

Layout (all integers little-endian):

    magic            8 bytes  b"MVCRCKPT"
    version          u32      format version, currently 1
    dtype tag        u8       1 = float32, 2 = float64
    seed             u64      RNG seed the run was launched with
    config length    u32      byte length of the UTF-8 config echo
    config text      ...      flat key=value text, exactly as configured
    param count      u32
    then per parameter, sorted lexicographically by name:
    name length      u16
    name             ...      UTF-8
    ndim             u8
    shape            ndim*u32
    data             ...      raw little-endian element bytes

Everything is canonical (sorted names, fixed-width headers, no padding), so
save(load(p)) reproduces the file byte for byte. That exactness is what the
plug-out identity checks lean on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"MVCRCKPT"
VERSION = 1
_TAG_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_TO_TAG = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


@dataclass
class Checkpoint:
    """One loaded checkpoint: parameters plus the run's provenance."""

    version: int
    dtype: np.dtype
    seed: int
    config_text: str
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def param_count(self) -> int:
        return sum(int(a.size) for a in self.params.values())


def save_checkpoint(path, params: dict[str, np.ndarray], seed: int,
                    config_text: str = "") -> None:
    """Write params (one shared float dtype) plus seed and config echo."""
    if not params:
        raise ValueError("refusing to write an empty checkpoint")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    dtypes = {np.asarray(a).dtype for a in params.values()}
    if len(dtypes) != 1:
        raise ValueError(f"parameters mix dtypes {sorted(map(str, dtypes))}")
    dtype = dtypes.pop()
    tag = _DTYPE_TO_TAG.get(dtype)
    if tag is None:
        raise ValueError(f"unsupported parameter dtype {dtype}")
    wire = np.dtype("<f4") if tag == 1 else np.dtype("<f8")
    cfg_bytes = config_text.encode("utf-8")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IBQ", VERSION, tag, seed))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype=wire)
            name_bytes = name.encode("utf-8")
            if len(name_bytes) > 0xFFFF:
                raise ValueError(f"parameter name too long: {name[:40]}...")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 8, "magic") != MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic)")
        version, tag, seed = struct.unpack(
            "<IBQ", _read_exact(f, 13, "header"))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if tag not in _TAG_TO_DTYPE:
            raise ValueError(f"unknown element type tag {tag}")
        dtype = _TAG_TO_DTYPE[tag]
        (cfg_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        config_text = _read_exact(f, cfg_len, "config text").decode("utf-8")
        (n_params,) = struct.unpack("<I", _read_exact(f, 4, "param count"))
        params: dict[str, np.ndarray] = {}
        prev = None
        for _ in range(n_params):
            (name_len,) = struct.unpack(
                "<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            if prev is not None and name <= prev:
                raise ValueError(
                    f"parameter names out of order: {name!r} after {prev!r}")
            prev = name
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, "ndim"))
            shape = struct.unpack(f"<{ndim}I",
                                  _read_exact(f, 4 * ndim, "shape"))
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            data = _read_exact(f, n_bytes, f"data for {name}")
            params[name] = np.frombuffer(data, dtype=dtype).reshape(shape)
        if f.read(1):
            raise ValueError("trailing bytes after the last parameter")
    return Checkpoint(version, dtype, seed, config_text, params)


def save_model(path, model, seed: int, config_text: str = "") -> None:
    """Checkpoint every named parameter of an encoder model."""
    save_checkpoint(path, {k: v.data for k, v in model.named_params().items()},
                    seed, config_text)
