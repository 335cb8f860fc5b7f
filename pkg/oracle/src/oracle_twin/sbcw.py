"""Standalone reader/writer for the SBCW tensor container.

Independent implementation of the byte layout; see the engine package for the
format description. Little-endian fp32, 64-byte aligned payloads.
"""
from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"SBCW"
VERSION = 1
ALIGN = 64


def write_sbcw(entries: "OrderedDict[str, np.ndarray]", path) -> None:
    arrays = OrderedDict(
        (name, np.ascontiguousarray(arr, dtype=np.float32)) for name, arr in entries.items()
    )
    header = bytearray()
    header += MAGIC
    header += struct.pack("<II", VERSION, len(arrays))
    fixed = len(header)
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        if not 0 < len(nb) <= 256:
            raise ValueError(f"bad tensor name {name!r}")
        fixed += 2 + len(nb) + 1 + 4 * arr.ndim + 1 + 8
    offset = (fixed + ALIGN - 1) // ALIGN * ALIGN
    offsets = []
    for arr in arrays.values():
        offsets.append(offset)
        offset = (offset + arr.nbytes + ALIGN - 1) // ALIGN * ALIGN
    for (name, arr), off in zip(arrays.items(), offsets):
        nb = name.encode("utf-8")
        header += struct.pack("<H", len(nb)) + nb
        header += struct.pack("<B", arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
        header += struct.pack("<BQ", 0, off)
    with open(path, "wb") as f:
        f.write(header)
        for arr, off in zip(arrays.values(), offsets):
            f.write(b"\x00" * (off - f.tell()))
            f.write(arr.astype("<f4", copy=False).tobytes())


def read_sbcw(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = 12
    out: OrderedDict = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        dtype_code, offset = struct.unpack_from("<BQ", blob, pos)
        pos += 9
        if dtype_code != 0:
            raise ValueError(f"{path}: {name!r} has dtype code {dtype_code}")
        n = int(np.prod(dims))
        out[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(dims).copy()
    return out
