import numpy as np
import pytest
from scipy import stats

from pathmild._validation import CoverageError
from pathmild.noise import (
    NoiseGrid,
    OUParams,
    check_tempered,
    coarsen,
    evaluate,
    load_path,
    modal_scales,
    ou_potential,
    ou_potential_nodes,
    sample_path,
    save_path,
    shift,
    xbeta_norm,
    xbeta_tail_bound,
    xbeta_variance_rate,
)
from pathmild.operator import SpectralState


def test_grid_contains_zero():
    g = NoiseGrid(-1.0, 2.0, 0.25)
    assert g.n_points == 13
    assert 0.0 in g.times()
    with pytest.raises(ValueError):
        NoiseGrid(0.5, 2.0, 0.25)
    with pytest.raises(ValueError):
        NoiseGrid(-1.0, 1.0, 0.3)


def test_zero_at_zero_and_determinism():
    g = NoiseGrid(-2.0, 2.0, 0.01)
    p = sample_path(1, g, 8, (0.5, 1.0))
    q = sample_path(1, g, 8, (0.5, 1.0))
    assert np.all(p.value(0.0) == 0.0)
    assert p.scalar_value(0.0) == 0.0
    assert p == q
    assert np.array_equal(p.modal_values, q.modal_values)
    assert sample_path(2, g, 8, (0.5, 1.0)) != p


def test_sample_path_rejects_bad_decay():
    g = NoiseGrid(-1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        sample_path(1, g, 4, (0.5, 0.5))
    with pytest.raises(ValueError):
        sample_path(1, g, 4, (1.5, 1.0))
    with pytest.raises(ValueError):
        sample_path(1, NoiseGrid(0.0, 1.0, 0.1), 4)


def test_modal_variance_monte_carlo():
    # Var w_k(1) = q_k^2 over 10^4 seeds
    g = NoiseGrid(-0.1, 1.0, 0.1)
    vals = np.array([sample_path(s, g, 4, (0.5, 1.0)).value(1.0) for s in range(10_000)])
    q = modal_scales(4, 0.5, 1.0)
    rel = vals.var(axis=0) / q**2
    assert np.all(np.abs(rel - 1) < 0.05), rel


def test_shift_group_and_definition(path, rng):
    assert shift(path, 0.0) == path
    a = shift(shift(path, -1.5), 0.7)
    b = shift(path, -0.8)
    assert np.array_equal(a.values_at_nodes(0, 1000), b.values_at_nodes(0, 1000))
    for _ in range(20):
        s = round(rng.uniform(-10, 2), 3)
        r = round(rng.uniform(-5, 2), 3)
        lhs = shift(path, s).value(r)
        rhs = path.value(s + r) - path.value(s)
        np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_linear_interpolation_and_coverage(path):
    t0, t1 = 0.3, 0.301
    mid = path.value(0.3005)
    np.testing.assert_allclose(mid, 0.5 * (path.value(t0) + path.value(t1)), rtol=1e-12, atol=1e-15)
    with pytest.raises(CoverageError):
        path.value(5.5)
    with pytest.raises(CoverageError):
        path.value(-21.0)


def test_evaluate_spaces(path):
    assert evaluate(path, 0.0, "X") == SpectralState(np.zeros(64))
    v = path.value(1.0)
    assert np.array_equal(evaluate(path, 1.0, "X").coeffs, v)
    k = np.arange(1, 65.0)
    brute = np.sqrt(np.pi / 2 * np.sum(k ** (4 * 0.75) * v**2))
    assert xbeta_norm(path, v) == pytest.approx(brute, rel=1e-13)
    assert evaluate(path, 1.0, "X_beta").norm() == pytest.approx(brute, rel=1e-13)
    with pytest.raises(ValueError):
        evaluate(path, 1.0, "Y")


def test_xbeta_partial_sums_bounded():
    rate = [xbeta_variance_rate(K, 0.75, 1.0) for K in (1, 4, 16, 64, 256)]
    assert np.all(np.diff(rate) > 0)
    assert rate[-1] < xbeta_tail_bound(256, 0.75, 1.0)


def test_coarsen_keeps_nodes(path):
    c = coarsen(path, 10)
    assert c.dt == pytest.approx(0.01)
    np.testing.assert_array_equal(c.value(1.23), path.value(1.23))


def test_ou_zero_path():
    g = NoiseGrid(-12.0, 1.0, 0.01)
    p = sample_path(1, g, 2)
    p._data.scalar_increments.setflags(write=True)
    p._data.scalar_increments[:] = 0.0
    p._data.cache.clear()
    assert ou_potential(p, OUParams(), 0.0) == 0.0


def test_ou_shift_covariance(path):
    prm = OUParams()
    for t in (0.0, 1.234, 3.0):
        assert ou_potential(path, prm, t) == pytest.approx(ou_potential(shift(path, t), prm, 0.0), abs=1e-12)
    # node array agrees with the direct sum
    z = ou_potential_nodes(path, prm)
    assert z[path.node(2.0)] == pytest.approx(ou_potential(path, prm, 2.0), abs=1e-10)


def test_ou_stationary_variance_and_ks():
    g = NoiseGrid(-11.0, 5.0, 0.01)
    prm = OUParams(mu=1.0)
    z0, z5 = [], []
    for s in range(10_000):
        p = sample_path(s, g, 1)
        z0.append(ou_potential(p, prm, 0.0))
        z5.append(ou_potential(p, prm, 5.0))
    z0 = np.asarray(z0)
    # left-point sums of exp(-mu r) dW have variance sum exp(-2 mu r_j) dt
    assert z0.var() == pytest.approx(0.5, rel=0.05)
    assert stats.ks_2samp(z0, z5).pvalue > 0.01


def test_ou_params_gate():
    with pytest.raises(ValueError):
        OUParams(mu=1.0, truncation_horizon=5.0)
    assert OUParams().tail_bound == pytest.approx(np.exp(-10))


def test_tempered_report(path):
    rep = check_tempered(path, eps=(0.01, 0.1, 1.0))
    assert all(np.diff(rep.maxima) <= 0)
    assert abs(rep.argmax_times[1]) < 20
    g = NoiseGrid(-1.0, 1.0, 0.1)
    z = sample_path(1, g, 3)
    z._data.cum.setflags(write=True)
    z._data.cum[:] = 0.0
    assert check_tempered(z).maxima == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("fmt", ["binary", "csv"])
def test_save_load_roundtrip(tmp_path, fmt):
    g = NoiseGrid(-1.0, 1.0, 0.01)
    p = shift(sample_path(7, g, 5, (0.6, 1.2), 2.0), 0.0)
    f = tmp_path / f"p.{fmt}"
    save_path(p, f, fmt)
    q = load_path(f)
    assert q == p
    save_path(q, tmp_path / "again", fmt)
    assert (tmp_path / "again").read_bytes() == f.read_bytes()
