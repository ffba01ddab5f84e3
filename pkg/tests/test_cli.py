import csv
import json

import numpy as np
import pytest

import oracles
from bgmd.cli import main
from bgmd.engine import read_jsonl

BASE = """
[task]
kind = least_squares
dim = 10
n = 80

[oracle]
batch_size = 5

[aggregator]
kind = bgmd
k = 3

[engine]
iterations = 15
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_json(capsys, argv):
    code = main(argv)
    return code, capsys.readouterr()


class TestGm:
    def test_single_row(self, tmp_path, capsys):
        code, out = run_json(capsys, ["gm", str(write(tmp_path, "p.csv", "1.5,-2,3\n"))])
        assert code == 0
        res = json.loads(out.out)
        assert res["point"] == [1.5, -2.0, 3.0] and res["objective"] == 0.0

    def test_identical_rows(self, tmp_path, capsys):
        code, out = run_json(capsys, ["gm", str(write(tmp_path, "p.csv", "4,4\n4,4\n4,4\n"))])
        assert json.loads(out.out)["point"] == [4.0, 4.0]

    def test_triangle_against_grid(self, tmp_path, capsys):
        code, out = run_json(capsys, ["gm", str(write(tmp_path, "p.csv", "0,0\n1,0\n0,1\n"))])
        res = json.loads(out.out)
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        grid, _ = oracles.grid_gm(pts, 1e-3, [(0.0, 1.0), (0.0, 1.0)])
        assert res["objective"] <= (1 + 1e-6) * grid and res["converged"]

    def test_missing_file(self, tmp_path, capsys):
        code, out = run_json(capsys, ["gm", str(tmp_path / "nope.csv")])
        assert code == 1 and out.err


class TestRun:
    def test_writes_outputs(self, tmp_path, capsys):
        cfg = write(tmp_path, "c.ini", BASE)
        out_dir = tmp_path / "out"
        code, out = run_json(capsys, ["run", str(cfg), "--out-dir", str(out_dir)])
        assert code == 0
        summary = json.loads(out.out)
        assert summary["steps"] == 15 and summary["diverged"] is False
        recs = read_jsonl(out_dir / "metrics.jsonl")
        assert [r.iter for r in recs] == list(range(15))
        echo = (out_dir / "resolved.ini").read_text()
        assert "k = 3" in echo and "[output]" in echo

    def test_diverged_run_exits_zero(self, tmp_path, capsys):
        text = BASE.replace("kind = bgmd\nk = 3", "kind = mean") + (
            "step = 1/2L\n[corruption]\npsi = 0.4\nattack = scaled_bit_flip\n")
        text = text.replace("iterations = 15", "iterations = 300")
        code, out = run_json(capsys, ["run", str(write(tmp_path, "c.ini", text)), "--out-dir",
                                      str(tmp_path / "o")])
        assert code == 0 and json.loads(out.out)["diverged"] is True

    def test_config_error_exit_two(self, tmp_path, capsys):
        code, out = run_json(capsys, ["run", str(write(tmp_path, "c.ini", BASE + "bogus = 1\n"))])
        assert code == 2 and "bogus" in out.err

    def test_k_larger_than_dim(self, tmp_path, capsys):
        code, out = run_json(capsys, ["run", str(write(tmp_path, "c.ini", BASE.replace("k = 3", "k = 11"))),
                                      "--out-dir", str(tmp_path / "o")])
        assert code == 2

    def test_env_out_dir(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("BGMD_OUT_DIR", str(tmp_path / "envdir"))
        code, _ = run_json(capsys, ["run", str(write(tmp_path, "c.ini", BASE))])
        assert code == 0 and (tmp_path / "envdir" / "metrics.jsonl").exists()

    def test_fed_mode(self, tmp_path, capsys):
        text = BASE.replace("iterations = 15", "iterations = 20\nmode = fed\nperiod = 5")
        code, out = run_json(capsys, ["run", str(write(tmp_path, "c.ini", text)), "--out-dir",
                                      str(tmp_path / "o")])
        assert code == 0 and json.loads(out.out)["steps"] == 4

    def test_seed_flag_is_deterministic(self, tmp_path, capsys):
        cfg = str(write(tmp_path, "c.ini", BASE))
        main(["run", cfg, "--seed", "4", "--out-dir", str(tmp_path / "a")])
        main(["run", cfg, "--seed", "4", "--out-dir", str(tmp_path / "b")])
        capsys.readouterr()
        a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
        assert a == (tmp_path / "b" / "metrics.jsonl").read_bytes()
        assert "seed = 4" in (tmp_path / "a" / "resolved.ini").read_text()


def test_sweep(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", BASE)
    root = tmp_path / "sweep"
    code, _ = run_json(capsys, ["sweep", str(cfg), "--param", "aggregator.k=2,5",
                                "--param", "corruption.psi=0.0,0.2", "--seeds", "2", "--out-dir", str(root)])
    assert code == 0
    with open(root / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert list(rows[0]) == ["cell", "aggregator.k", "corruption.psi", "seed", "final_loss",
                             "final_dist_sq", "final_residual", "diverged", "steps"]
    for row in rows:
        assert (root / row["cell"] / "metrics.jsonl").exists()
        assert (root / row["cell"] / "resolved.ini").exists()
    assert {r["cell"] for r in rows} >= {"aggregator.k=2__corruption.psi=0.2__seed=1"}


def test_sweep_bad_param(tmp_path, capsys):
    code, _ = run_json(capsys, ["sweep", str(write(tmp_path, "c.ini", BASE)), "--param", "aggregator.k",
                                "--out-dir", str(tmp_path / "s")])
    assert code == 2


def test_bench(capsys):
    code, out = run_json(capsys, ["bench", "--d", "500", "--b", "4", "--k", "5,50,500", "--trials", "2"])
    assert code == 0
    lines = out.out.strip().splitlines()
    assert lines[0] == "d,b,k,gm_s,bgmd_s,speedup" and len(lines) == 4
    assert [int(l.split(",")[2]) for l in lines[1:]] == [5, 50, 500]
