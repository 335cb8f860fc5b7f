"""Model assembly tests: builds, ablations, forward contract and the
structural counters."""
import numpy as np
import pytest

import sbcformer.blocks as B
from sbcformer.errors import ConfigError, StateError
from sbcformer.model import (AblationFlags, VARIANTS, VariantSpec, block_names, build,
                             conv_macs, count_bn_stats, count_gmacs, count_macs,
                             count_macs_by_block, count_params, count_params_by_block,
                             forward, get_variant, parameter_shapes, stage_params,
                             stem_params, embed_params)
from sbcformer.tensor import DTYPE

from conftest import randt


def test_build_seeded_determinism():
    a = build("B", seed=42)
    b = build("B", seed=42)
    assert a.params.keys() == b.params.keys()
    for n in a.params:
        assert np.array_equal(a.params[n], b.params[n]), n


def test_variant_table_dims():
    assert get_variant("XS").stage_dims == (96, 160, 288)
    assert get_variant("S").stage_dims == (96, 192, 320)
    assert get_variant("B").stage_dims == (128, 256, 384)
    assert get_variant("L").stage_dims == (192, 288, 384)
    assert get_variant("XS").mattn_counts == (2, 3, 2)
    assert get_variant("L").mattn_counts == (2, 4, 3)


def test_unknown_variant():
    with pytest.raises(ConfigError):
        get_variant("XL")


def test_invalid_specs_name_the_field():
    with pytest.raises(ConfigError, match="head_dim"):
        build(VariantSpec("bad", (96, 160, 300), (2, 3, 2), expansion_ratio=3))
    with pytest.raises(ConfigError, match="input_hw"):
        build(VariantSpec("bad", (96, 160, 288), (2, 3, 2), expansion_ratio=3, input_hw=200))
    with pytest.raises(ConfigError, match="expansion_ratio"):
        build(VariantSpec("bad", (96, 160, 288), (2, 3, 2), expansion_ratio=0))


def test_no_local_has_fewer_params():
    full = count_params("B")
    ablated = count_params("B", AblationFlags(no_local_stream=True))
    assert ablated < full


def test_std_attn_has_fewer_params():
    assert count_params("B", AblationFlags(standard_attention=True)) < count_params("B")


def test_ablation_identity_when_flags_false():
    spec = get_variant("B")
    assert parameter_shapes(spec, AblationFlags()) == parameter_shapes(spec, None)


def test_no_local_removes_exactly_gate_and_concat_half():
    spec = get_variant("B")
    full = parameter_shapes(spec, AblationFlags())
    ablated = parameter_shapes(spec, AblationFlags(no_local_stream=True))
    removed = set(full) - set(ablated)
    assert removed == {
        f"stage{i}.fuse.gate.{leaf}"
        for i in (1, 2, 3)
        for leaf in ("w", "bn.gamma", "bn.beta", "bn.mean", "bn.var")
    }
    for i, c in enumerate(spec.stage_dims, start=1):
        assert full[f"stage{i}.fuse.merge.w"] == (c, 2 * c, 1, 1)
        assert ablated[f"stage{i}.fuse.merge.w"] == (c, c, 1, 1)
    assert set(ablated) - set(full) == set()


def test_count_params_structural_not_value_dependent():
    spec = get_variant("XS")
    assert count_params(build(spec, init="random", seed=3)) == count_params(build(spec, init="empty"))
    assert count_params(build(spec, init="empty")) == count_params(spec)


def test_bn_stats_counted_separately():
    spec = get_variant("XS")
    stats = count_bn_stats(spec)
    assert stats > 0
    total_stored = sum(int(np.prod(s)) for s in parameter_shapes(spec).values())
    assert count_params(spec) + stats == total_stored


def test_params_and_macs_monotone():
    params = [count_params(v) for v in ("XS", "S", "B", "L")]
    macs = [count_macs(v) for v in ("XS", "S", "B", "L")]
    assert params == sorted(params) and len(set(params)) == 4
    assert macs == sorted(macs) and len(set(macs)) == 4


def test_single_pointwise_conv_mac_formula():
    for c in (96, 288):
        assert conv_macs(c, c, 1, 1, 7, 7) == 49 * c * c


def test_mattn_macs_independent_of_stage_resolution():
    by_224 = count_macs_by_block("B", input_hw=224)
    by_448 = count_macs_by_block("B", input_hw=448)
    for name in by_224:
        if ".mattn" in name or ".mixer" in name or ".convt" in name:
            assert by_224[name] == by_448[name], name
        if ".invres" in name or name.startswith("embed") or name == "stem":
            assert by_448[name] > by_224[name], name


def test_mac_blocks_sum_to_total():
    for v in ("XS", "B"):
        assert sum(count_macs_by_block(v).values()) == count_macs(v)


def test_params_by_block_sum_matches():
    spec = get_variant("S")
    assert sum(count_params_by_block(spec).values()) == count_params(spec)


def test_forward_shapes_and_finiteness(rng):
    m = build("XS", seed=0)
    x = randt(rng, (1, 3, 224, 224))
    y = forward(m, x)
    assert y.shape == (1, 1000)
    assert np.isfinite(y).all()


def test_zero_classifier_zero_logits(rng):
    m = build("XS", seed=0)
    m.params["head.linear.w"][:] = 0.0
    m.params["head.linear.b"][:] = 0.0
    y = forward(m, randt(rng, (1, 3, 224, 224)))
    assert np.array_equal(y, np.zeros((1, 1000), dtype=DTYPE))


def test_forward_pure_and_bitwise_repeatable(rng):
    m = build("XS", seed=1)
    x = randt(rng, (1, 3, 224, 224))
    assert np.array_equal(forward(m, x), forward(m, x))


def test_empty_model_forward_raises(rng):
    m = build("XS", init="empty")
    with pytest.raises(StateError):
        forward(m, randt(rng, (1, 3, 224, 224)))


def test_forward_matches_block_composition(rng):
    m = build("XS", seed=2)
    x = randt(rng, (1, 3, 224, 224))
    ref = B.stem_forward(x, stem_params(m))
    for i in range(3):
        ref = B.sbcformer_block_forward(ref, stage_params(m, i))
        if i < 2:
            ref = B.embedding_forward(ref, embed_params(m, i + 1))
    import sbcformer.kernels as K

    logits = K.linear(K.global_avg_pool(ref), m.params["head.linear.w"], m.params["head.linear.b"])
    assert np.array_equal(forward(m, x), logits)


def test_trace_covers_all_block_boundaries(rng):
    m = build("XS", seed=0)
    trace = {}
    forward(m, randt(rng, (1, 3, 224, 224)), trace=trace)
    assert list(trace) == block_names(m.spec)


def test_trace_attention_maps_are_7x7(rng):
    m = build("XS", seed=0)
    trace = {}
    forward(m, randt(rng, (1, 3, 224, 224)), trace=trace)
    for name, act in trace.items():
        if ".mattn" in name or ".mixer" in name:
            assert act.shape[2:] == (7, 7), name


def test_std_attn_forward_runs(rng):
    m = build("XS", AblationFlags(standard_attention=True), seed=0)
    y = forward(m, randt(rng, (1, 3, 224, 224)))
    assert y.shape == (1, 1000) and np.isfinite(y).all()


def test_no_local_forward_runs(rng):
    m = build("XS", AblationFlags(no_local_stream=True), seed=0)
    y = forward(m, randt(rng, (1, 3, 224, 224)))
    assert y.shape == (1, 1000) and np.isfinite(y).all()


def test_parameter_names_unique_and_block_mapped():
    spec = get_variant("B")
    names = list(parameter_shapes(spec))
    assert len(names) == len(set(names))
    blocks = set(block_names(spec))
    from sbcformer.model import block_of_param

    for n in names:
        assert block_of_param(n) in blocks, n
