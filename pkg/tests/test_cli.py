import csv
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_examples
from imrlab.cli import int_list, main
from imrlab.cost_model import REFERENCE_FIFTH, save_profile
from imrlab.ingest import format_line, write_cache
from imrlab.optimizer import random_profile


@pytest.fixture
def reference(tmp_path):
    path = tmp_path / "reference.profile"
    save_profile(REFERENCE_FIFTH, path)
    return path


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_plan_cost_and_time(capsys, reference):
    code, out, _ = run_cli(capsys, "plan", "--profile", reference, "--objective", "cost")
    assert code == 0
    assert out.splitlines()[-2] == "objective,N,f,regime,T,C,continuous_N"
    assert out.splitlines()[-1].startswith("cost,24,")
    code, out, _ = run_cli(capsys, "plan", "--profile", reference, "--objective", "time", "--discrete")
    assert code == 0 and out.splitlines()[-1].startswith("time,120,")
    code, out, _ = run_cli(capsys, "plan", "--profile", reference, "--objective", "cost", "--no-in-loop")
    assert code == 0 and "cost,24,24," in out


def test_usage_errors(capsys, reference):
    assert run_cli(capsys, "plan", "--profile", reference)[0] == 1
    assert run_cli(capsys, "plan", "--profile", reference, "--objective", "speed")[0] == 1
    assert run_cli(capsys, "bogus")[0] == 1
    assert run_cli(capsys, "sweep", "--profile", reference, "--n", "x", "--f", "2")[0] == 1
    assert run_cli(capsys, "--help")[0] == 0


def test_data_errors(capsys, tmp_path):
    bad = tmp_path / "bad.profile"
    bad.write_text("R=1\n")
    assert run_cli(capsys, "plan", "--profile", bad, "--objective", "time")[0] == 2
    assert run_cli(capsys, "plan", "--profile", tmp_path / "missing", "--objective", "time")[0] == 2
    text = tmp_path / "d.txt"
    text.write_text("1 | 0:1\n1 | 4:1 2:1\n")
    code, _, err = run_cli(capsys, "ingest", text, tmp_path / "d.imr")
    assert code == 2 and "line 2" in err
    assert not (tmp_path / "d.imr").exists()
    junk = tmp_path / "junk.imr"
    junk.write_bytes(b"nope")
    code, _, _ = run_cli(capsys, "run", "--cache", junk, "--n", "1", "--fanin", "2", "--loss", "squared",
                         "--eta", "0.1", "--max-iter", "1", "--model-out", tmp_path / "m.bin")
    assert code == 2


def test_ingest_prints_count(capsys, tmp_path):
    recs = random_examples(np.random.default_rng(0), 25, 30)
    text = tmp_path / "d.txt"
    text.write_text("\n".join(format_line(r) for r in recs) + "\n")
    code, out, _ = run_cli(capsys, "ingest", text, tmp_path / "d.imr")
    assert code == 0 and out.strip() == "25"


def test_sweep_csv(capsys, reference, tmp_path):
    out_csv = tmp_path / "sweep.csv"
    code, _, _ = run_cli(capsys, "sweep", "--profile", reference, "--n", "15,24,30,60,90,120", "--f", "4", "--out", out_csv)
    assert code == 0
    rows = list(csv.DictReader(out_csv.open()))
    assert len(rows) == 6
    assert min(rows, key=lambda r: float(r["C_model"]))["N"] == "24"
    assert min(rows, key=lambda r: float(r["T_model"]))["N"] == "120"


def test_sweep_then_plan_agree(capsys, tmp_path):
    profile = random_profile(np.random.default_rng(31), (5, 60))
    path = tmp_path / "p.profile"
    save_profile(profile, path)
    out_csv = tmp_path / "s.csv"
    run_cli(capsys, "sweep", "--profile", path, "--n", f"1:{profile.N_max}", "--f", "2:8", "--out", out_csv)
    rows = list(csv.DictReader(out_csv.open()))
    for obj, col in (("time", "T_model"), ("cost", "C_model")):
        code, out, _ = run_cli(capsys, "plan", "--profile", path, "--objective", obj, "--discrete")
        plan_value = float(out.splitlines()[-1].split(",")[4 if obj == "time" else 5])
        best = min(float(r[col]) for r in rows)
        assert best <= plan_value * (1 + 1e-9)
    assert run_cli(capsys, "validate", "--profile", path, "--trials", "3", "--seed", "1")[0] == 0


def test_validate(capsys):
    code, out, _ = run_cli(capsys, "validate", "--trials", "25", "--seed", "4")
    assert code == 0 and "0 divergences" in out
    code, out, _ = run_cli(capsys, "validate", "--trials", "10", "--seed", "4", "--discrete")
    assert code == 0


def test_validate_divergence_exit_code(capsys, monkeypatch):
    import imrlab.cli as cli
    import imrlab.optimizer as opt

    real = opt.validate_against_sweep

    def broken(*a, **kw):
        rep = real(*a, **kw)
        return rep.__class__(**{**rep.__dict__, "plan_value": rep.sweep_value * 2})

    monkeypatch.setattr(cli, "validate_against_sweep", broken)
    code, out, _ = run_cli(capsys, "validate", "--trials", "2", "--seed", "0")
    assert code == 3 and "DIVERGED" in out


def make_cache(tmp_path, n=300, dim=20):
    path = tmp_path / "train.imr"
    write_cache(path, random_examples(np.random.default_rng(5), n, dim))
    return path


def strip_wall(path):
    rows = list(csv.DictReader(open(path)))
    return [{k: v for k, v in r.items() if not k.endswith("_wall")} for r in rows]


def test_run_deterministic(capsys, tmp_path):
    cache = make_cache(tmp_path)
    outs = []
    for k in range(2):
        model, stats = tmp_path / f"m{k}.bin", tmp_path / f"s{k}.csv"
        code, _, _ = run_cli(capsys, "run", "--cache", cache, "--n", "4", "--fanin", "3", "--loss", "squared",
                             "--eta", "0.001", "--max-iter", "5", "--m", "50", "--model-out", model, "--stats-out", stats)
        assert code == 0
        outs.append((model.read_bytes(), strip_wall(stats)))
    assert outs[0] == outs[1]
    stats = outs[0][1]
    assert len(stats) == 5
    assert all(r["records_from_disk"] == "100" and r["records_from_cache"] == "200" for r in stats)


def test_run_grad_tol(capsys, tmp_path):
    cache = make_cache(tmp_path)
    code, out, _ = run_cli(capsys, "run", "--cache", cache, "--n", "2", "--fanin", "2", "--loss", "squared",
                           "--eta", "0.002", "--max-iter", "3", "--grad-tol", "1e-12",
                           "--model-out", tmp_path / "m.bin", "--stats-out", tmp_path / "s.csv")
    assert code == 0 and "iterations=3" in out


def test_run_empty_cache_gives_initial_model(capsys, tmp_path):
    cache = tmp_path / "empty.imr"
    write_cache(cache, [])
    model = tmp_path / "m.bin"
    code, out, _ = run_cli(capsys, "run", "--cache", cache, "--n", "3", "--fanin", "2", "--loss", "logistic",
                           "--eta", "0.1", "--max-iter", "1", "--dim", "4", "--model-out", model,
                           "--stats-out", tmp_path / "s.csv")
    assert code == 0 and "iterations=0" in out
    data = model.read_bytes()
    assert data == (4).to_bytes(8, "little") + (0).to_bytes(8, "little") + bytes(32)
    assert (tmp_path / "s.csv").read_text().startswith("iteration,")


def test_run_bad_fanin(capsys, tmp_path):
    cache = make_cache(tmp_path, n=10)
    code, _, _ = run_cli(capsys, "run", "--cache", cache, "--n", "2", "--fanin", "1", "--loss", "squared",
                         "--eta", "0.1", "--max-iter", "1", "--model-out", tmp_path / "m.bin")
    assert code == 1


@pytest.mark.filterwarnings("ignore::imrlab.calibrate.CalibrationWarning")
def test_calibrate(capsys, tmp_path):
    out = tmp_path / "host.profile"
    code, text, _ = run_cli(capsys, "calibrate", "--budget", "1000000", "--dim", "32", "--out", out,
                            "--sample-size", "1000", "--trials", "1", "--n-max", "4", "--records", "5000")
    assert code == 0 and out.exists() and "R=5000" in text


def test_int_list():
    assert int_list("2,4,8") == [2, 4, 8]
    assert int_list("2:5") == [2, 3, 4, 5]
    assert int_list("1:9:4,20") == [1, 5, 9, 20]


def test_module_entry_point(reference):
    proc = subprocess.run([sys.executable, "-m", "imrlab", "plan", "--profile", str(reference), "--objective", "cost"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.splitlines()[-1].startswith("cost,24,")
