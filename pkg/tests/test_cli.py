"""CLI contract tests: subcommand behavior and exit codes."""
import json

import numpy as np
import pytest
from PIL import Image

from sbcformer.cli import run
from sbcformer.model import block_names, build, count_gmacs, count_params, forward
from sbcformer.tensor import DTYPE
from sbcformer.weights import WeightStore, export_random, save


@pytest.fixture(scope="module")
def xs_weights(tmp_path_factory):
    p = tmp_path_factory.mktemp("w") / "xs.sbcw"
    export_random("XS", 3, p)
    return p


def make_golden(tmp_path, seed=3, input_seed=9, damage=None):
    model = build("XS", seed=seed)
    x = np.random.default_rng(input_seed).standard_normal((1, 3, 224, 224)).astype(DTYPE)
    trace = {}
    forward(model, x, trace=trace)
    inp = tmp_path / "input.sbcw"
    save(WeightStore({"input": x}), inp)
    entries = {f"act.{n}": a for n, a in trace.items()}
    if damage:
        entries[f"act.{damage}"] = entries[f"act.{damage}"] + DTYPE(0.5)
    gold = tmp_path / "golden.sbcw"
    save(WeightStore(entries), gold)
    return inp, gold


def test_unknown_flag_usage_exit(capsys):
    assert run(["count", "--model", "B", "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_subcommand_usage_exit():
    assert run([]) == 1


def test_count_prints_params_and_gmacs(capsys):
    assert run(["count", "--model", "B"]) == 0
    out = capsys.readouterr().out
    assert f"{count_params('B') / 1e6:.3f}M" in out
    assert f"{count_gmacs('B'):.3f} GMACs" in out


def test_count_ablated(capsys):
    assert run(["count", "--model", "B", "--ablate", "no-local"]) == 0
    assert "no-local" in capsys.readouterr().out


def test_count_csv_output(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert run(["count", "--model", "B", "--out", str(out), "--format", "csv"]) == 0
    assert out.exists()
    assert (tmp_path / "b_structure.png").exists()


def test_bench_emits_latency_report(tmp_path, capsys):
    out = tmp_path / "r.json"
    code = run(["bench", "--model", "XS", "--runs", "2", "--warmup", "0",
                "--seed", "1", "--out", str(out)])
    assert code == 0
    d = json.loads(out.read_text())
    assert d["variant"] == "XS" and d["runs"] == 2
    assert d["mean_ms"] > 0
    assert {b["name"] for b in d["blocks"]} == set(block_names(build("XS", init="empty").spec))


def test_bench_stdout_json(capsys):
    assert run(["bench", "--model", "XS", "--runs", "1", "--warmup", "0", "--seed", "1"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["runs"] == 1


def test_export_random_then_verify_passes(tmp_path, capsys):
    w = tmp_path / "w.sbcw"
    assert run(["export-random", "--model", "XS", "--seed", "3", "--out", str(w)]) == 0
    inp, gold = make_golden(tmp_path)
    code = run(["verify", "--model", "XS", "--weights", str(w), "--input", str(inp),
                "--golden", str(gold), "--tol", "1e-6", "--deterministic"])
    out = capsys.readouterr().out
    assert code == 0
    assert "verification passed" in out
    assert "stem" in out and "head" in out


def test_verify_failure_names_first_layer(tmp_path, capsys):
    w = tmp_path / "w.sbcw"
    export_random("XS", 3, w)
    inp, gold = make_golden(tmp_path, damage="stage1.mixer")
    code = run(["verify", "--model", "XS", "--weights", str(w), "--input", str(inp),
                "--golden", str(gold), "--tol", "1e-4"])
    out = capsys.readouterr().out
    assert code == 2
    assert "verification failed at layer stage1.mixer" in out


def test_verify_wrong_weights_fail(tmp_path, capsys):
    w = tmp_path / "w.sbcw"
    export_random("XS", 4, w)  # different seed than the golden bundle
    inp, gold = make_golden(tmp_path)
    code = run(["verify", "--model", "XS", "--weights", str(w), "--input", str(inp),
                "--golden", str(gold), "--tol", "1e-4"])
    assert code == 2


def test_verify_missing_file_data_exit(tmp_path):
    code = run(["verify", "--model", "XS", "--weights", str(tmp_path / "nope.sbcw"),
                "--input", str(tmp_path / "nope2"), "--golden", str(tmp_path / "nope3")])
    assert code == 2


def test_classify_top5(tmp_path, xs_weights, capsys):
    img = tmp_path / "img.png"
    rng = np.random.default_rng(0)
    Image.fromarray(rng.integers(0, 256, (320, 280, 3), dtype=np.uint8)).save(img)
    labels = tmp_path / "labels.txt"
    labels.write_text("\n".join(f"class-{i}" for i in range(1000)))
    code = run(["classify", "--model", "XS", "--weights", str(xs_weights),
                "--image", str(img), "--labels", str(labels)])
    out = capsys.readouterr().out
    assert code == 0
    lines = [ln for ln in out.splitlines() if ln.strip()]
    assert len(lines) == 5
    probs = [float(ln.split("p=")[1].split()[0]) for ln in lines]
    assert all(0.0 <= p <= 1.0 for p in probs)
    assert sum(probs) <= 1.0 + 1e-6
    assert "class-" in lines[0]


def test_classify_undecodable_image(tmp_path, xs_weights):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"nope")
    assert run(["classify", "--model", "XS", "--weights", str(xs_weights),
                "--image", str(bad)]) == 2
