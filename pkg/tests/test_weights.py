"""Weight container tests: bit-exact round trips, corruption handling,
model binding and batch-norm folding."""
import struct

import numpy as np
import pytest

from sbcformer.errors import ConfigError, CorruptionError, DataError, FormatError, VersionError
from sbcformer.model import AblationFlags, build, count_params, forward, parameter_shapes
from sbcformer.tensor import DTYPE
from sbcformer.weights import (WeightStore, bind, export_random, fold_batchnorm, load,
                               save, store_from_model)

from conftest import randt


def small_store(rng):
    return WeightStore({
        "a.w": randt(rng, (3, 2, 1, 1)),
        "a.b": randt(rng, (3,)),
        "long.dotted.name.var": randt(rng, (7,)),
    })


def test_round_trip_bitwise(tmp_path, rng):
    st = small_store(rng)
    p = tmp_path / "s.sbcw"
    save(st, p)
    assert load(p) == st


def test_empty_store_valid(tmp_path):
    p = tmp_path / "empty.sbcw"
    save(WeightStore(), p)
    st = load(p)
    assert len(st) == 0


def test_name_length_cap(rng):
    with pytest.raises(ConfigError):
        WeightStore({"x" * 300: randt(rng, (2,))})


def test_corrupt_magic(tmp_path, rng):
    p = tmp_path / "s.sbcw"
    save(small_store(rng), p)
    blob = bytearray(p.read_bytes())
    blob[0] = ord(b"X")
    p.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load(p)


def test_unknown_version(tmp_path, rng):
    p = tmp_path / "s.sbcw"
    save(small_store(rng), p)
    blob = bytearray(p.read_bytes())
    blob[4:8] = struct.pack("<I", 2)
    p.write_bytes(bytes(blob))
    with pytest.raises(VersionError, match="2.*1"):
        load(p)


def test_truncated_payload(tmp_path, rng):
    p = tmp_path / "s.sbcw"
    save(small_store(rng), p)
    blob = p.read_bytes()
    p.write_bytes(blob[:-16])
    with pytest.raises(CorruptionError):
        load(p)


def test_export_random_deterministic_files(tmp_path):
    p1, p2 = tmp_path / "a.sbcw", tmp_path / "b.sbcw"
    export_random("XS", 11, p1)
    export_random("XS", 11, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_export_file_size_arithmetic(tmp_path):
    p = tmp_path / "xs.sbcw"
    export_random("XS", 0, p)
    shapes = parameter_shapes(build("XS", init="empty").spec)
    payload = 4 * sum(int(np.prod(s)) for s in shapes.values())
    size = p.stat().st_size
    # header: ~40 bytes per tensor plus alignment padding, never more than 128 per tensor
    assert payload <= size <= payload + 128 * (len(shapes) + 1)


def test_large_variant_binds_with_zero_unbound(tmp_path):
    p = tmp_path / "l.sbcw"
    export_random("L", 0, p)
    st = load(p)
    model = bind(build("L", init="empty"), st)
    assert model.loaded()
    assert list(model.params) == st.names()


def test_bind_rejects_name_mismatch(tmp_path, rng):
    p = tmp_path / "xs.sbcw"
    export_random("XS", 0, p)
    st = load(p)
    del st.entries["head.linear.b"]
    st["head.linear.extra"] = randt(rng, (3,))
    with pytest.raises(DataError, match="missing"):
        bind(build("XS", init="empty"), st)


def test_bind_rejects_shape_mismatch(tmp_path, rng):
    p = tmp_path / "xs.sbcw"
    export_random("XS", 0, p)
    st = load(p)
    st.entries["head.linear.b"] = randt(rng, (999,))
    with pytest.raises(DataError, match="shape"):
        bind(build("XS", init="empty"), st)


def test_bind_rejects_cross_variant(tmp_path):
    p = tmp_path / "xs.sbcw"
    export_random("XS", 0, p)
    with pytest.raises(DataError):
        bind(build("S", init="empty"), load(p))


def test_fold_identity_bn_keeps_weights(rng):
    w = randt(rng, (4, 3, 3, 3))
    st = WeightStore({
        "c.w": w,
        "c.bn.gamma": np.ones(4, dtype=DTYPE),
        "c.bn.beta": np.zeros(4, dtype=DTYPE),
        "c.bn.mean": np.zeros(4, dtype=DTYPE),
        "c.bn.var": np.ones(4, dtype=DTYPE),
    })
    folded = fold_batchnorm(st, eps=0.0)
    assert folded.names() == ["c.w", "c.b"]
    assert np.array_equal(folded["c.w"], w)
    assert np.array_equal(folded["c.b"], np.zeros(4, dtype=DTYPE))


def test_fold_zero_gamma_channel(rng):
    w = randt(rng, (2, 3, 1, 1))
    beta = randt(rng, (2,))
    st = WeightStore({
        "c.w": w,
        "c.bn.gamma": np.array([0.0, 1.0], dtype=DTYPE),
        "c.bn.beta": beta,
        "c.bn.mean": randt(rng, (2,)),
        "c.bn.var": np.ones(2, dtype=DTYPE),
    })
    folded = fold_batchnorm(st, eps=0.0)
    assert np.array_equal(folded["c.w"][0], np.zeros((3, 1, 1), dtype=DTYPE))
    assert folded["c.b"][0] == beta[0]


def test_fold_missing_stats_rejected(rng):
    st = WeightStore({"c.w": randt(rng, (2, 2, 1, 1)), "c.bn.gamma": np.ones(2, dtype=DTYPE)})
    with pytest.raises(DataError):
        fold_batchnorm(st)


def test_fold_preserves_forward_within_tolerance(tmp_path, rng):
    model = build("XS", seed=5)
    st = store_from_model(model)
    folded = fold_batchnorm(st, eps=model.bn_eps)
    assert len(folded) < len(st)
    folded_model = bind(build("XS", init="empty"), folded)
    x = randt(rng, (1, 3, 224, 224))
    assert np.abs(forward(folded_model, x) - forward(model, x)).max() <= 1e-5


def test_fold_leaves_pre_conv_norms(rng):
    model = build("XS", seed=5)
    folded = fold_batchnorm(store_from_model(model))
    assert "stage1.mattn0.pw.norm.gamma" in folded
    assert "stage1.mattn0.dw.norm.gamma" in folded
    assert "stage1.invres0.expand.bn.gamma" not in folded


def test_fold_round_trips_through_file(tmp_path, rng):
    model = build("XS", seed=6, ablation=AblationFlags(no_local_stream=True))
    folded = fold_batchnorm(store_from_model(model))
    p = tmp_path / "folded.sbcw"
    save(folded, p)
    reloaded = load(p)
    assert reloaded == folded
    fm = bind(build("XS", AblationFlags(no_local_stream=True), init="empty"), reloaded)
    x = randt(rng, (1, 3, 224, 224))
    assert np.abs(forward(fm, x) - forward(model, x)).max() <= 1e-5
