"""``SIFR`` parameter checkpoints.

Layout (little-endian)::

    b"SIFR"  u16 version=1  u32 count
    count x { u16 name_len, name (utf-8), u8 ndim, u32 dims[ndim], f64 data[prod(dims)] }
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError
from .tensor import ParameterSet

MAGIC = b"SIFR"
VERSION = 1


def encode_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<4sHI", MAGIC, VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f8").tobytes())
    return b"".join(out)


def decode_arrays(buf: bytes) -> dict[str, np.ndarray]:
    off = 0

    def unpack(fmt: str, what: str):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(buf):
            raise FormatError(f"truncated {what}", len(buf))
        vals = struct.unpack_from(fmt, buf, off)
        off += size
        return vals

    magic, version, count = unpack("<4sHI", "header")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    arrays = {}
    for _ in range(count):
        (nlen,) = unpack("<H", "name length")
        if off + nlen > len(buf):
            raise FormatError("truncated name", len(buf))
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = unpack("<B", "rank")
        dims = unpack(f"<{ndim}I", "shape")
        n = int(np.prod(dims)) if ndim else 1
        if off + 8 * n > len(buf):
            raise FormatError(f"truncated data for {name}", len(buf))
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(dims)
        off += 8 * n
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", off)
    return arrays


def save(path, params: ParameterSet, extra: dict[str, np.ndarray] | None = None) -> None:
    arrays = {p.name: p.tensor.data for p in params}
    for k, v in (extra or {}).items():
        arrays[f"extra.{k}"] = v
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(encode_arrays(arrays))
    os.replace(tmp, path)


def load(path) -> dict[str, np.ndarray]:
    return decode_arrays(Path(path).read_bytes())


def load_into(params: ParameterSet, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Copy checkpoint values into ``params``; returns the ``extra.*`` arrays."""
    for p in params:
        if p.name not in arrays:
            raise DimensionError(f"checkpoint lacks parameter {p.name}")
        if arrays[p.name].shape != p.shape:
            raise DimensionError(
                f"parameter {p.name}: checkpoint shape {arrays[p.name].shape}, config shape {p.shape}")
        p.tensor.data[...] = arrays[p.name]
    unknown = [k for k in arrays if k not in params and not k.startswith("extra.")]
    if unknown:
        raise DimensionError(f"checkpoint has parameters unknown to the config: {unknown[:5]}")
    return {k[6:]: v for k, v in arrays.items() if k.startswith("extra.")}
