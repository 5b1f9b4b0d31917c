import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ugcp.arrayio import read_array, write_array
from ugcp.cli import main
from ugcp.heads import UgcpConfig, init_params
from ugcp.propagation import refine

from e2e_pipeline import FIXTURE, run_pipeline

SMALL = ["--set", "phantom.extents=[24,24]", "--set", "phantom.radius_max=2.0", "--set", "phantom.gap_length=4"]


def ok(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, argv
    return code


def err(capsys, *argv):
    code = main([str(a) for a in argv])
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    return code, record["error"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "run"
    ok("phantom", "--n", 3, "--seed", 11, "--out", root, *SMALL)
    return root


def _csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_phantom_layout_and_manifest(data_dir):
    dirs = sorted((data_dir / "samples").iterdir())
    assert [d.name for d in dirs] == ["sample_0000", "sample_0001", "sample_0002"]
    for i, d in enumerate(dirs):
        assert {p.name for p in d.iterdir()} == {"gt.ugcp", "centerline.ugcp", "observation.ugcp", "h.ugcp",
                                                  "sample.json"}
        assert json.loads((d / "sample.json").read_text()) == {"index": i, "seed": 11 + i}
    m = json.loads((data_dir / "manifest.json").read_text())
    assert m["command"] == "phantom" and m["seed"] == 11
    assert m["config"]["phantom"]["extents"] == [24, 24]
    assert len(m["config_hash"]) == 64
    assert set(m["versions"]) >= {"ugcp", "python", "numpy", "scipy", "scikit-image"}
    assert len(m["outputs"]) == 12


def test_manifest_re_execution_is_byte_exact(data_dir, tmp_path):
    ok("phantom", "--config", data_dir / "manifest.json", "--out", tmp_path / "again")
    for a in sorted((data_dir / "samples").rglob("*.ugcp")):
        b = tmp_path / "again" / a.relative_to(data_dir)
        assert a.read_bytes() == b.read_bytes()
    m1 = json.loads((data_dir / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "again" / "manifest.json").read_text())
    assert m1["config_hash"] == m2["config_hash"]


def test_refine_T0_equals_head_probabilities(data_dir, tmp_path):
    ok("refine", "--data", data_dir, "--T", 0, "--out", tmp_path / "r")
    h = read_array(data_dir / "samples" / "sample_0000" / "h.ugcp")
    cfg = UgcpConfig.for_dim(2, T=0)
    want = refine(h, init_params(cfg.seed, cfg.C_h, cfg.C_f, cfg.K), cfg).pi
    got = read_array(tmp_path / "r" / "samples" / "sample_0000" / "pi.ugcp")
    assert got.tobytes() == want.tobytes()
    ok("eval", "--pred", tmp_path / "r", "--gt", data_dir, "--out", tmp_path / "e")
    assert len(_csv(tmp_path / "e" / "metrics.csv")) == 3


def test_eval_identical_masks(tmp_path, data_dir):
    gt = data_dir / "samples" / "sample_0001" / "gt.ugcp"
    ok("eval", "--pred", gt, "--gt", gt, "--out", tmp_path / "e")
    (row,) = _csv(tmp_path / "e" / "metrics.csv")
    assert float(row["dsc"]) == 1.0 and float(row["cldice"]) == 1.0 and float(row["hd95"]) == 0.0
    summary = json.loads((tmp_path / "e" / "summary.json").read_text())
    assert summary["n_cases"] == 1 and summary["dsc"]["mean"] == 1.0


def test_eval_empty_prediction_marks_hd95_undefined(tmp_path, data_dir):
    gt = data_dir / "samples" / "sample_0001" / "gt.ugcp"
    empty = write_array(np.zeros(read_array(gt).shape, np.uint8), tmp_path / "empty.ugcp")
    ok("eval", "--pred", empty, "--gt", gt, "--out", tmp_path / "e")
    (row,) = _csv(tmp_path / "e" / "metrics.csv")
    assert row["hd95"] == "undefined" and float(row["dsc"]) == 0.0


def test_train_outputs(data_dir, tmp_path):
    ok("train", "--data", data_dir, "--epochs", 3, "--T", 1, "--out", tmp_path / "t")
    rows = _csv(tmp_path / "t" / "loss_curve.csv")
    assert [r["epoch"] for r in rows] == ["0", "1", "2", "final"]
    assert list(rows[0]) == ["epoch", "dice", "bce", "uq", "total"]
    side = json.loads((tmp_path / "t" / "params" / "params.json").read_text())
    assert side["ugcp"]["T"] == 1
    m = json.loads((tmp_path / "t" / "manifest.json").read_text())
    assert m["config"]["opt"]["epochs"] == 3
    # refine picks up T from the trained sidecar
    ok("refine", "--data", data_dir, "--params", tmp_path / "t", "--out", tmp_path / "r")
    rm = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert rm["config"]["ugcp"]["T"] == 1
    assert rm["params_config_hash"] == side["config_hash"]


@pytest.mark.parametrize("fmt,magic", [("pgm", b"P5"), ("png", b"\x89PNG")])
def test_overlays(data_dir, tmp_path, fmt, magic):
    pytest.importorskip("PIL") if fmt == "png" else None
    ok("refine", "--data", data_dir, "--overlay", fmt, "--out", tmp_path / "r")
    img = tmp_path / "r" / "samples" / "sample_0000" / f"overlay.{fmt}"
    assert img.read_bytes()[:len(magic)] == magic


def test_refine_sliding_window_and_float32(data_dir, tmp_path):
    ok("refine", "--data", data_dir, "--set", "run.patch=16", "--set", "run.dtype=\"float32\"",
       "--out", tmp_path / "r")
    pi = read_array(tmp_path / "r" / "samples" / "sample_0000" / "pi.ugcp")
    assert pi.dtype == np.float32 and pi.shape == (2, 24, 24)


@pytest.mark.parametrize("threads", ["1", "4", "8"])
def test_refine_thread_independent(data_dir, tmp_path, monkeypatch, threads):
    ok("refine", "--data", data_dir, "--set", "run.patch=12", "--out", tmp_path / "a")
    monkeypatch.setenv("UGCP_NUM_THREADS", threads)
    ok("refine", "--data", data_dir, "--set", "run.patch=12", "--out", tmp_path / "b")
    for f in sorted((tmp_path / "a" / "samples").rglob("*.ugcp")):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_gradcheck_quick(tmp_path):
    ok("gradcheck", "--quick", "--set", "run.Ts=[0,1]", "--out", tmp_path / "g")
    rep = json.loads((tmp_path / "g" / "gradcheck.json").read_text())
    assert rep["passed"] is True
    assert json.loads((tmp_path / "g" / "manifest.json").read_text())["passed"] is True


def test_bench_small(tmp_path):
    ok("bench", "--set", "run.shapes=[[8,8],[16,8]]", "--set", "run.reps=1", "--set", "run.backends=[\"python\"]",
       "--out", tmp_path / "b")
    rep = json.loads((tmp_path / "b" / "bench.json").read_text())
    assert len(rep["rows"]) == 2 and len(rep["linearity"]["python/threads=1"]) == 1
    assert len(_csv(tmp_path / "b" / "bench.csv")) == 2


# --- error records -------------------------------------------------------------

def test_unknown_flag(capsys, tmp_path):
    code, e = err(capsys, "phantom", "--bogus", "--out", tmp_path / "x")
    assert code == 2 and e["type"] == "UsageError"


def test_missing_subcommand(capsys):
    code, e = err(capsys)
    assert code == 2 and "subcommand" in e["message"]


def test_missing_input(capsys, tmp_path):
    code, e = err(capsys, "train", "--data", tmp_path / "nope", "--out", tmp_path / "t")
    assert code == 2 and e["command"] == "train" and e["exit_code"] == 2
    assert json.loads((tmp_path / "t" / "error.json").read_text())["error"] == e


def test_bad_config_values(capsys, tmp_path):
    code, e = err(capsys, "phantom", "--set", "phantom.contrast=0", "--out", tmp_path / "p")
    assert code == 2 and e["type"] == "ConfigError"
    code, e = err(capsys, "phantom", "--set", "phantom.colour=1", "--out", tmp_path / "q")
    assert code == 2 and "colour" in e["message"]
    code, e = err(capsys, "phantom", "--set", "nosection=1", "--out", tmp_path / "r")
    assert code == 2


def test_bad_config_file(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    code, e = err(capsys, "phantom", "--config", bad, "--out", tmp_path / "p")
    assert code == 2 and "JSON" in e["message"]


def test_non_empty_out_dir(capsys, data_dir):
    code, e = err(capsys, "phantom", "--out", data_dir)
    assert code == 2 and "not empty" in e["message"]


def test_corrupt_array_exit_code(capsys, tmp_path, data_dir):
    bad = tmp_path / "bad.ugcp"
    bad.write_bytes(b"UGCPAR\x01")
    code, e = err(capsys, "eval", "--pred", bad, "--gt", bad, "--out", tmp_path / "e")
    assert code == 3 and e["type"] == "ArrayFileError"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ugcp", "phantom", "--n", "1", "--out", str(tmp_path / "p"),
                           *SMALL], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["ok"] is True
    proc = subprocess.run([sys.executable, "-m", "ugcp", "eval", "--out", str(tmp_path / "e")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"]["type"] == "UsageError"


# --- golden run ---------------------------------------------------------------

def test_end_to_end_matches_golden_fixture(tmp_path):
    out = run_pipeline(tmp_path)
    assert (out / "metrics.csv").read_text() == FIXTURE.read_text()
    assert len(_csv(out / "metrics.csv")) == 20
