"""Binary weight container and weight-level transforms.

File layout (little-endian, bit-exact):

    magic 'SBCW' | version u32 | tensor_count u32
    per tensor:  name_len u16 | name utf-8 | ndim u8 | dims u32 * ndim
                 | dtype u8 (0 = fp32) | payload_offset u64
    payload region: concatenated fp32 buffers at their offsets, 64-byte aligned

Payload lengths are implied by the dims product, so truncation is detectable.
The container is the exchange format between this engine and any reference
implementation; round-trips are bitwise.
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import replace

import numpy as np

from .errors import ConfigError, CorruptionError, DataError, FormatError, VersionError
from .model import AblationFlags, Model, build, parameter_shapes
from .tensor import DTYPE

MAGIC = b"SBCW"
FORMAT_VERSION = 1
DTYPE_F32 = 0
ALIGN = 64
MAX_NAME_BYTES = 256


class WeightStore:
    """Ordered name -> float32 array mapping with a format version."""

    def __init__(self, entries=None, format_version: int = FORMAT_VERSION):
        self.entries: OrderedDict = OrderedDict()
        self.format_version = format_version
        for name, arr in (entries or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, arr):
        if not name:
            raise ConfigError("tensor name must be non-empty")
        if len(name.encode("utf-8")) > MAX_NAME_BYTES:
            raise ConfigError(f"tensor name exceeds {MAX_NAME_BYTES} bytes: {name[:64]}...")
        self.entries[name] = np.ascontiguousarray(arr, dtype=DTYPE)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def names(self):
        return list(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightStore):
            return NotImplemented
        if self.format_version != other.format_version:
            return False
        if self.names() != other.names():
            return False
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.entries.values(), other.entries.values())
        )


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def save(store: WeightStore, path) -> None:
    header = bytearray()
    header += MAGIC
    header += struct.pack("<II", store.format_version, len(store))
    records = []
    fixed = len(header)
    for name, arr in store.entries.items():
        nb = name.encode("utf-8")
        if not nb or len(nb) > MAX_NAME_BYTES:
            raise ConfigError(f"invalid tensor name for container: {name!r}")
        fixed += 2 + len(nb) + 1 + 4 * arr.ndim + 1 + 8
        records.append((nb, arr))
    offset = _align(fixed)
    offsets = []
    for _, arr in records:
        offsets.append(offset)
        offset = _align(offset + arr.nbytes)
    for (nb, arr), off in zip(records, offsets):
        header += struct.pack("<H", len(nb)) + nb
        header += struct.pack("<B", arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
        header += struct.pack("<BQ", DTYPE_F32, off)
    with open(path, "wb") as f:
        f.write(header)
        for (_, arr), off in zip(records, offsets):
            f.write(b"\x00" * (off - f.tell()))
            f.write(arr.astype("<f4", copy=False).tobytes())


def load(path) -> WeightStore:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a weight container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise VersionError(
            f"{path}: container version {version} unsupported (engine speaks {FORMAT_VERSION})"
        )
    pos = 12
    store = WeightStore(format_version=version)
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            if name_len == 0 or name_len > MAX_NAME_BYTES:
                raise FormatError(f"{path}: invalid tensor name length {name_len}")
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            dtype_code, offset = struct.unpack_from("<BQ", blob, pos)
            pos += 9
        except struct.error as exc:
            raise FormatError(f"{path}: truncated header") from exc
        if dtype_code != DTYPE_F32:
            raise FormatError(f"{path}: tensor {name!r} has unknown dtype code {dtype_code}")
        if any(d < 1 for d in dims):
            raise FormatError(f"{path}: tensor {name!r} has non-positive extent {dims}")
        if name in store:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        nbytes = 4 * int(np.prod(dims)) if dims else 4
        if offset % ALIGN:
            raise FormatError(f"{path}: tensor {name!r} payload not {ALIGN}-byte aligned")
        if offset + nbytes > len(blob):
            raise CorruptionError(
                f"{path}: tensor {name!r} payload truncated "
                f"(needs bytes [{offset}, {offset + nbytes}), file has {len(blob)})"
            )
        arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(dims)), offset=offset)
        store.entries[name] = arr.reshape(dims).copy()
    return store


# ---------------------------------------------------------------------------
# Model binding
# ---------------------------------------------------------------------------

def _bn_sites(names) -> set[str]:
    return {n[: -len(".bn.gamma")] for n in names if n.endswith(".bn.gamma")}


def bind(model: Model, store: WeightStore) -> Model:
    """Attach a loaded store to a model, validating the name contract.

    A conv site whose batch norm was folded away supplies ``site.w`` plus
    ``site.b`` instead of ``site.w`` plus ``site.bn.*``; both forms bind.
    """
    expected = parameter_shapes(model.spec, model.ablation)
    folded = {
        site for site in _bn_sites(expected)
        if f"{site}.bn.gamma" not in store and f"{site}.b" in store
    }
    effective: OrderedDict = OrderedDict()
    for name, shape in expected.items():
        owner = name.rsplit(".bn.", 1)[0] if ".bn." in name else None
        if owner in folded:
            continue
        effective[name] = shape
        if name.endswith(".w") and name[:-2] in folded:
            effective[name[:-2] + ".b"] = (shape[0],)
    missing = [n for n in effective if n not in store]
    unexpected = [n for n in store.names() if n not in effective]
    if missing or unexpected:
        raise DataError(
            f"weight store does not match model structure: "
            f"missing={missing[:8]}{'...' if len(missing) > 8 else ''} "
            f"unexpected={unexpected[:8]}{'...' if len(unexpected) > 8 else ''}"
        )
    bad = [
        (n, tuple(store[n].shape), tuple(s))
        for n, s in effective.items()
        if tuple(store[n].shape) != tuple(s)
    ]
    if bad:
        raise DataError(f"weight shapes disagree with model structure: {bad[:5]}")
    return replace(model, params=OrderedDict((n, store[n]) for n in effective))


def store_from_model(model: Model) -> WeightStore:
    return WeightStore(model.params)


def export_random(variant, seed: int, path, ablation: AblationFlags | None = None) -> None:
    """Build a seeded random model and save it; the fixture generator for
    cross-implementation parity checks."""
    model = build(variant, ablation, init="random", seed=seed)
    save(store_from_model(model), path)


# ---------------------------------------------------------------------------
# Batch-norm folding
# ---------------------------------------------------------------------------

def fold_batchnorm(store: WeightStore, eps: float = 1e-5) -> WeightStore:
    """Fold every conv -> BN pair into the convolution weights.

    w' = w * gamma / sqrt(var + eps), b' = beta + (b - mean) * gamma / sqrt(var + eps).
    Folded sites lose their bn.* entries and gain a bias. Norms that precede
    a convolution (named ``.norm.``) are left untouched.
    """
    sites = _bn_sites(store.names())
    for site in sites:
        for leaf in ("beta", "mean", "var"):
            if f"{site}.bn.{leaf}" not in store:
                raise DataError(f"fold_batchnorm: site {site!r} is missing bn.{leaf}")
    out = WeightStore(format_version=store.format_version)
    for name in store.names():
        owner = name.rsplit(".bn.", 1)[0] if ".bn." in name else None
        if owner in sites:
            continue
        if name.endswith(".w") and name[:-2] in sites:
            site = name[:-2]
            w = store[name].astype(np.float64)
            gamma = store[f"{site}.bn.gamma"].astype(np.float64)
            beta = store[f"{site}.bn.beta"].astype(np.float64)
            mean = store[f"{site}.bn.mean"].astype(np.float64)
            var = store[f"{site}.bn.var"].astype(np.float64)
            if np.any(var < 0):
                raise DataError(f"fold_batchnorm: negative variance at {site!r}")
            scale = gamma / np.sqrt(var + eps)
            b0 = store[f"{site}.b"].astype(np.float64) if f"{site}.b" in store else 0.0
            out.entries[name] = (w * scale.reshape((-1,) + (1,) * (w.ndim - 1))).astype(DTYPE)
            out.entries[f"{site}.b"] = (beta + (b0 - mean) * scale).astype(DTYPE)
        elif name.endswith(".b") and name[:-2] in sites:
            continue  # original bias already folded into the new one
        else:
            out.entries[name] = store[name]
    return out
