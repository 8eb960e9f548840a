import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lazypsrl.cli import main
from lazypsrl.validation import run_validation


def write_config(path, **kw):
    doc = {"env": "webserver-1.0", "T": 60, "seeds": [7]}
    doc.update(kw)
    path.write_text(json.dumps(doc))
    return str(path)


def test_run_writes_outputs(tmp_path):
    cfg = write_config(tmp_path / "c.json", seeds=[0, 1])
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "regret.csv")))
    assert rows[0] == ["t", "mean", "std"] and len(rows) == 61
    summary = json.loads((out / "summary.json").read_text())
    assert summary["T"] == 60 and summary["seeds"] == [0, 1]
    lines = (out / "trajectories" / "seed_1.jsonl").read_text().splitlines()
    header = json.loads(lines[0])
    assert header["fingerprint"] == summary["fingerprint"]
    first = json.loads(lines[1])
    assert {"t", "x", "a", "x_next", "loss", "resampled", "log_det"} <= set(first)
    assert len(lines) == 61


def test_run_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert main(["run", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", cfg, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "regret.csv").read_bytes() == (tmp_path / "b" / "regret.csv").read_bytes()


def test_run_threads_identical(tmp_path):
    cfg = write_config(tmp_path / "c.json", seeds=[1, 2, 3])
    assert main(["run", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", cfg, "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    assert (tmp_path / "a" / "regret.csv").read_bytes() == (tmp_path / "b" / "regret.csv").read_bytes()


def test_run_config_errors(tmp_path, capsys):
    assert main(["run", write_config(tmp_path / "c.json", env="webserver-9")]) == 2
    assert "env" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_run_runtime_failure(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", env="random-tabular", x0=42, seeds=[5])
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "seed 5" in capsys.readouterr().err


def test_sweep_prior_scale(tmp_path):
    cfg = write_config(tmp_path / "c.json", seeds=[0, 1])
    out = tmp_path / "sw"
    assert main(["sweep", cfg, "--param", "prior_scale", "--values", "0.1,1,10", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert [r["prior_scale"] for r in rows] == ["0.1", "1", "10"]
    assert (out / "prior_scale=10" / "regret.csv").exists()


def test_sweep_single_value_matches_run(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert main(["run", cfg, "--out", str(tmp_path / "r")]) == 0
    assert main(["sweep", cfg, "--param", "prior_scale", "--values", "1", "--out", str(tmp_path / "s")]) == 0
    a = (tmp_path / "r" / "regret.csv").read_bytes()
    b = (tmp_path / "s" / "prior_scale=1" / "regret.csv").read_bytes()
    assert a == b


def test_sweep_errors(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert main(["sweep", cfg, "--param", "discount", "--values", "1"]) == 2
    assert main(["sweep", cfg, "--param", "T", "--values", "a,b"]) == 2
    assert main(["sweep", cfg, "--param", "resample_factor", "--values", "0.5"]) == 2


def test_validate_tabular_passes(capsys):
    assert main(["validate", "--family", "tabular", "--trials", "100", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out


def test_validate_linear_passes():
    assert main(["validate", "--family", "linear", "--trials", "20", "--seed", "1"]) == 0


def test_validate_usage_errors():
    assert main(["validate", "--family", "tabular", "--trials", "0"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["validate", "--family", "quantum"])
    assert info.value.code == 2


def test_corrupted_theta_is_caught_with_witness():
    def corrupt(theta):
        theta = np.array(theta, copy=True)
        theta[0] *= 1.1
        return theta

    results = {r.name: r for r in run_validation("tabular", 3, 0, theta_hook=corrupt)}
    bad = results["coupling"]
    assert not bad.passed
    assert bad.witness["row_sum"] == pytest.approx(1.1)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lazypsrl", "validate", "--family", "linear", "--trials", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
