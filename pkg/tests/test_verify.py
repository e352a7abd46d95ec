import math

import pytest

from pathmild._validation import ConditionError
from pathmild.config import RunConfig
from pathmild.verify import (
    SUITES,
    CheckResult,
    read_results,
    regression_baseline,
    run_suite,
    summary_table,
    write_results,
)


@pytest.fixture(scope="module")
def small():
    return RunConfig({"verify.fibers": 2})


@pytest.fixture(scope="module")
def cocycle_results(small):
    return run_suite("cocycle", small)


def test_check_result_status(small):
    assert CheckResult.compare("x", 1.0, 1.0, 0.0, small).status == "pass"
    assert CheckResult.compare("x", 1.1, 1.0, 0.05, small).status == "fail"
    assert CheckResult.compare("x", math.nan, 1.0, 0.0, small).status == "fail"
    assert CheckResult.info("x", 3.0, small).status == "info"
    with pytest.raises(ValueError):
        CheckResult("x", "maybe", 0.0, 0.0, 0.0, "")


def test_suites_cover_families():
    assert set(SUITES["all"]) == {"estimates", "cocycle", "absorbing", "absorbing_time", "smoothing",
                                  "lipschitz", "compactness", "dimension"}
    with pytest.raises(ValueError):
        run_suite("nope")


def test_cocycle_suite(cocycle_results, small):
    assert all(r.status == "pass" for r in cocycle_results)
    linear = [r for r in cocycle_results if r.check_id.endswith("[0]")]
    assert linear and all(r.bound == 1e-9 for r in linear)
    assert all(r.config_hash for r in cocycle_results)
    assert len({r.check_id for r in cocycle_results}) == len(cocycle_results)


def test_threads_do_not_change_results(cocycle_results, small):
    again = run_suite("cocycle", small, threads=3)
    assert [(r.check_id, r.measured) for r in again] == [(r.check_id, r.measured) for r in cocycle_results]


def test_estimates_suite(small):
    res = run_suite("estimates", small)
    assert not [r for r in res if r.status == "fail"]
    assert any(r.status == "info" for r in res)


def test_round_trip_and_baseline(cocycle_results, tmp_path):
    f = tmp_path / "base.json"
    write_results(cocycle_results, f)
    back = read_results(f)
    assert [r.check_id for r in back] == [r.check_id for r in cocycle_results]
    rep = regression_baseline(f, cocycle_results)
    assert {v["kind"] for v in rep.values()} == {"unchanged"}
    with pytest.raises(FileNotFoundError):
        regression_baseline(tmp_path / "none.json", cocycle_results)


def test_baseline_classification(small, tmp_path):
    base = [CheckResult.compare(f"c{i}", 1.0, 2.0, 0.0, small) for i in range(4)]
    f = tmp_path / "b.json"
    write_results(base, f)
    cur = [
        CheckResult.compare("c0", 1.0, 2.0, 0.0, small),
        CheckResult.compare("c1", 0.5, 2.0, 0.0, small),
        CheckResult.compare("c2", 1.5, 2.0, 0.0, small),
        CheckResult.compare("c3", 3.0, 2.0, 0.0, small),
        CheckResult.compare("c4", 1.0, 2.0, 0.0, small),
    ]
    kinds = {k: v["kind"] for k, v in regression_baseline(f, cur).items()}
    assert kinds == {"c0": "unchanged", "c1": "improvement", "c2": "regression",
                     "c3": "status_change", "c4": "added"}
    kinds = {k: v["kind"] for k, v in regression_baseline(f, cur[:1]).items()}
    assert kinds["c3"] == "removed"


def test_halving_dt_is_an_improvement(tmp_path):
    # Euler-Maruyama error against the mild solver shrinks with dt
    from pathmild.operator import state_norm
    from pathmild.solver import pathwise_mild_solve, reference_emaruyama_solve
    cfg = RunConfig()
    p, gen, F = cfg.path(1), cfg.generator(), cfg.nonlinearity()
    u0 = cfg.initial_state()
    ref = pathwise_mild_solve(u0, 0.5, p, gen, F, cfg.sigma, cfg.solver_params(1e-3)).final

    def gap(dt):
        em = reference_emaruyama_solve(u0, 0.5, p, gen, F, cfg.sigma, cfg.solver_params(dt)).final
        return CheckResult.compare("gap", state_norm(em - ref), 1e-2, 0.0, cfg)

    f = tmp_path / "b.json"
    write_results([gap(4e-3)], f)
    assert regression_baseline(f, [gap(2e-3)])["gap"]["kind"] == "improvement"


def test_summary_table(cocycle_results):
    text = summary_table(cocycle_results)
    assert text.splitlines()[-1] == f"{len(cocycle_results)} checks, 0 failed"


def test_drift_gate_blocks_suite():
    with pytest.raises(ConditionError):
        run_suite("cocycle", RunConfig({"drift.C_F": 0.6, "drift.Cbar_F": 0.6}))
