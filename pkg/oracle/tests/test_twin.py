"""Structural agreement between the twin and the engine: names, shapes,
counts and deterministic golden dumps."""
import numpy as np
import torch

from oracle_twin import build_twin, contract_tensors, load_contract, read_sbcw
from oracle_twin.contract import is_bn_statistic
from oracle_twin.golden import dump_golden
from oracle_twin.twin import count_learnable

from conftest import run_engine


def test_name_set_matches_engine_export(tmp_path, engine_cli_available):
    out = tmp_path / "b.sbcw"
    assert run_engine("export-random", "--model", "B", "--seed", "0", "--out", out).returncode == 0
    engine_names = list(read_sbcw(out))
    twin_names = list(contract_tensors(build_twin("B")))
    assert set(engine_names) ^ set(twin_names) == set()
    assert engine_names == twin_names  # same canonical order too


def test_param_count_matches_engine(tmp_path, engine_cli_available):
    out = tmp_path / "s.sbcw"
    assert run_engine("export-random", "--model", "S", "--seed", "0", "--out", out).returncode == 0
    store = read_sbcw(out)
    engine_learnable = sum(v.size for n, v in store.items() if not is_bn_statistic(n))
    assert count_learnable(build_twin("S")) == engine_learnable


def test_engine_store_binds_to_twin(tmp_path, engine_cli_available):
    out = tmp_path / "xs.sbcw"
    assert run_engine("export-random", "--model", "XS", "--seed", "2", "--out", out).returncode == 0
    model = build_twin("XS", seed=99)
    load_contract(model, read_sbcw(out))  # zero shape mismatches or this raises


def test_zero_classifier_zero_logits():
    model = build_twin("XS", seed=0)
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()
        y = model(torch.zeros(1, 3, 224, 224))
    assert torch.equal(y, torch.zeros(1, 1000))


def test_golden_dump_deterministic(tmp_path):
    m1 = dump_golden("XS", "none", seed=3, input_seed=5, outdir=tmp_path / "a")
    m2 = dump_golden("XS", "none", seed=3, input_seed=5, outdir=tmp_path / "b")
    assert m1["layers"] == m2["layers"]
    for fname in ("weights.sbcw", "golden.sbcw"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()


def test_ablated_bundles_exist(tmp_path):
    for ablation in ("no-local", "std-attn"):
        manifest = dump_golden("B", ablation, seed=1, input_seed=1,
                               outdir=tmp_path / ablation)
        assert manifest["ablation"] == ablation
        bundle = read_sbcw(tmp_path / ablation / "golden.sbcw")
        assert "input" in bundle and "act.head" in bundle
