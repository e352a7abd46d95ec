import json

import pytest

from pathmild._validation import ConditionError
from pathmild.config import DEFAULTS, ConfigError, RunConfig, load_config, parse_set


def test_defaults_are_valid():
    cfg = RunConfig()
    assert cfg.as_dict() == DEFAULTS
    assert cfg.seeds == [1, 2, 3]
    assert cfg.constants().lam == pytest.approx(0.5)


def test_precedence(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"instance": {"K": 32}, "drift": {"sigma": 0.2}}))
    env = {"PATHMILD_DRIFT__SIGMA": "0.3", "PATHMILD_SOLVER__DT": "0.002"}
    cfg = load_config(f, {"drift.sigma": 0.4}, environ=env)
    assert cfg["instance.K"] == 32
    assert cfg["solver.dt"] == 0.002
    assert cfg.sigma == 0.4
    assert load_config(f, environ=env).sigma == 0.3
    assert load_config(f, environ={}).sigma == 0.2
    assert load_config(environ={}).sigma == 0.1


def test_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig({"instance.KK": 3})
    with pytest.raises(ConfigError):
        load_config(environ={"PATHMILD_NOPE": "1"})
    with pytest.raises(ConfigError):
        parse_set(["nope.key=1"])
    with pytest.raises(ConfigError):
        parse_set(["drift.sigma"])
    assert parse_set(["drift.sigma=0.5"]) == {"drift.sigma": "0.5"}


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json", environ={})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad, environ={})
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(bad, environ={})


def test_coercion_and_ranges():
    cfg = RunConfig({"instance.K": "16", "noise.seeds": "[4, 5]"})
    assert cfg["instance.K"] == 16 and cfg.seeds == [4, 5]
    with pytest.raises(ConfigError):
        RunConfig({"instance.K": "abc"})
    with pytest.raises(ConfigError):
        RunConfig({"solver.quadrature": "simpson"})
    with pytest.raises(ConfigError):
        RunConfig({"solver.dt": 1.5e-3})
    with pytest.raises(ConfigError):
        RunConfig({"attractor.nu_grid": [0.6]})


@pytest.mark.parametrize("vals,label", [
    ({"instance.a0": 0.9}, "(U)"),
    ({"drift.C_F": 0.6, "drift.Cbar_F": 0.6}, "(Drift)"),
    ({"noise.gamma": 0.4}, "(Noise)"),
    ({"noise.beta": 1.5}, "(Noise)"),
    ({"attractor.eta": 0.8}, "(Noise)"),
])
def test_condition_gates(vals, label):
    with pytest.raises(ConditionError) as exc:
        RunConfig(vals)
    assert label in str(exc.value)


def test_fisher_preset_switch():
    cfg = RunConfig({"simulate.u0": "fisher_kpp"})
    assert cfg["drift.kind"] == "fisher_kpp_clipped"
    kept = RunConfig({"simulate.u0": "fisher_kpp", "drift.kind": "zero"})
    assert kept["drift.kind"] == "zero"


def test_hash_and_manifest(tmp_path):
    a = RunConfig({"drift.sigma": 0.2})
    assert a.hash == RunConfig({"drift.sigma": "0.2"}).hash
    assert a.hash != RunConfig().hash
    m = tmp_path / "manifest.json"
    m.write_text(json.dumps({"config_hash": a.hash, "config": a.as_dict(), "files": {}}))
    assert load_config(m, environ={}).hash == a.hash


def test_builders():
    cfg = RunConfig({"instance.K": 8, "drift.kind": "linear", "drift.rho": 0.1})
    assert cfg.nonlinearity().lipschitz == pytest.approx(0.1)
    assert cfg.generator().K == 8
    assert cfg.initial_state().shape == (8,)
    assert cfg.with_overrides(drift__sigma=0.0).sigma == 0.0


def test_list_parsing():
    assert RunConfig({"output.formats": "[csv,binary]"})["output.formats"] == ["csv", "binary"]
    assert RunConfig({"attractor.T": "5, 10"})["attractor.T"] == [5, 10]
    with pytest.raises(ConfigError):
        RunConfig({"attractor.T": "[x]"})
