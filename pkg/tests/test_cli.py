import json
import os

import pytest

from pathmild.cli import main
from pathmild.verify import read_results

FAST = ["--set", "simulate.horizon=0.2", "--set", "instance.K=16"]


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--output", str(out)])
    return code, out


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_simulate_threads_identical(tmp_path):
    c1, o1 = _run(tmp_path, "t1", "simulate", *FAST, "--threads", "1")
    c3, o3 = _run(tmp_path, "t3", "simulate", *FAST, "--threads", "3")
    assert c1 == c3 == 0
    m1, m3 = _manifest(o1), _manifest(o3)
    assert m1["files"] == m3["files"]
    assert set(m1["files"]) == {"trajectory_seed1.csv", "trajectory_seed2.csv", "trajectory_seed3.csv",
                                "simulate_summary.csv"}
    assert m1["seeds"] == [1, 2, 3]


def test_replay_from_manifest(tmp_path):
    code, out = _run(tmp_path, "a", "simulate", *FAST, "--seed", "7", "--set", "output.formats=[csv,binary]")
    assert code == 0
    code, again = _run(tmp_path, "b", "simulate", "--config", str(out / "manifest.json"))
    assert code == 0
    assert _manifest(out)["files"] == _manifest(again)["files"]
    assert "trajectory_seed7.pmtraj" in _manifest(out)["files"]


def test_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("PATHMILD_INSTANCE__K", "8")
    code, out = _run(tmp_path, "e", "simulate", "--seed", "1", "--set", "simulate.horizon=0.1")
    assert code == 0 and _manifest(out)["config"]["instance.K"] == 8


@pytest.mark.parametrize("args", [
    ["simulate", "--set", "nope=1"],
    ["simulate", "--set", "instance.a0=0.95"],
    ["simulate", "--set", "drift.C_F=0.6", "--set", "drift.Cbar_F=0.6"],
    ["simulate", "--config", "/nonexistent/c.json"],
    ["simulate", "--threads", "0"],
    ["verify", "--suite", "nope"],
    ["verify", "--suite", "cocycle", "--baseline", "/nonexistent/b.json", "--set", "verify.fibers=1"],
    ["simulate", "--set", "simulate.horizon=50"],
    ["frobnicate"],
])
def test_usage_errors(tmp_path, args, capsys):
    code, _ = _run(tmp_path, "err", *args)
    assert code == 2


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", *FAST, "--output", str(blocker / "sub")]) == 2


def test_verify_cocycle_and_baseline(tmp_path):
    code, out = _run(tmp_path, "v", "verify", "--suite", "cocycle", "--set", "verify.fibers=1")
    assert code == 0
    code, again = _run(tmp_path, "v2", "verify", "--suite", "cocycle", "--set", "verify.fibers=1",
                       "--baseline", str(out / "verify_results.json"))
    assert code == 0
    report = json.loads((again / "regression.json").read_text())
    assert {v["kind"] for v in report.values()} == {"unchanged"}


def test_verify_absorbing_reports_time_failures(tmp_path):
    code, out = _run(tmp_path, "abs", "verify", "--suite", "absorbing", "--set", "verify.fibers=2")
    res = read_results(out / "verify_results.json")
    failed = [r.check_id for r in res if r.status == "fail"]
    assert code == (1 if failed else 0)
    assert all(c.startswith("absorbing_time.") for c in failed)
    assert all(r.status != "fail" for r in res if r.check_id.startswith("absorbing."))


def test_dimension_command(tmp_path):
    code, out = _run(tmp_path, "d", "dimension", "--seed", "1")
    assert code == 0
    info = json.loads((out / "dimension.json").read_text())
    assert info["dimension_bound"] > 0
    assert (out / "covering.csv").read_text().splitlines()[0] == "eps,log2_count,modes,tail,truncated"


def test_attractor_command(tmp_path):
    code, out = _run(tmp_path, "att", "attractor", "--seed", "1", "--set", "instance.K=16",
                     "--set", "attractor.ensemble_count=100", "--set", "attractor.T=[5,10]")
    assert code == 0
    info = json.loads((out / "attractor.json").read_text())
    assert info["bound_ge_empirical"] and info["dimension_bound"] >= info["max_box_dimension"]
    names = set(_manifest(out)["files"])
    assert {"absorbing.csv", "dimension.csv", "attraction_rate.csv", "nu_sweep.csv", "attractor.json",
            "cloud_seed1_T5.csv", "cloud_seed1_T10.csv"} <= names
    for n in names:
        assert os.path.getsize(out / n) > 0
