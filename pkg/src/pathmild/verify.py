"""Property harness: re-check the quantitative estimates on seeded fibres.

Each family runs over at least three parameter configurations derived from
the base :class:`~pathmild.config.RunConfig`.  A result is ``fail`` exactly
when ``measured > bound + tolerance``; fitted quantities without a bound are
reported as ``info``.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .attractor import (
    InitialEnsemble,
    absorbing_radius,
    absorbing_time,
    box_counting,
    covering_number,
    dimension_bound,
    pullback_cloud,
    smoothing_constant,
)
from .config import RunConfig
from .noise import shift, xbeta_norm
from .operator import (
    decay_envelope,
    draw_decay_samples,
    state_norm,
    verify_decay_estimates,
)
from .solver import cocycle_defect, lipschitz_probe, pathwise_mild_solve

__all__ = ["CheckResult", "SUITES", "run_suite", "regression_baseline", "write_results",
           "read_results", "summary_table"]


@dataclass(frozen=True)
class CheckResult:
    check_id: str
    status: str
    measured: float
    bound: float
    tolerance: float
    config_hash: str
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in ("pass", "fail", "info"):
            raise ValueError(f"bad status {self.status!r}")

    @classmethod
    def compare(cls, check_id, measured, bound, tolerance, cfg, **detail):
        measured, bound = float(measured), float(bound)
        ok = math.isfinite(measured) and measured <= bound + tolerance
        status = "pass" if ok else "fail"
        return cls(check_id, status, measured, bound, float(tolerance), cfg.hash, detail)

    @classmethod
    def info(cls, check_id, measured, cfg, **detail):
        return cls(check_id, "info", float(measured), math.nan, math.nan, cfg.hash, detail)


# -- configuration variants ----------------------------------------------------

def _variants(cfg, family):
    """Three or more configurations per family, derived from ``cfg``."""
    fk = {"drift.kind": "fisher_kpp_clipped"}
    lin = {"drift.kind": "zero", "drift.sigma": 0.0}
    table = {
        "estimates": [{}, {"instance.eps": 0.0}, {"instance.a0": 0.1, "instance.eps": 0.4}],
        "cocycle": [lin, {}, fk],
        "absorbing": [{}, fk, {"drift.sigma": 0.0}],
        "absorbing_time": [{}, {"drift.sigma": 0.2}, fk],
        "smoothing": [{}, {"attractor.t_tilde": 0.5}, fk],
        "lipschitz": [{}, fk, {"drift.kind": "linear", "drift.rho": 0.2}],
        "compactness": [{"attractor.eta": 0.25}, {}, {"attractor.eta": 0.7}],
        "dimension": [{}, fk, {"drift.C_F": 0.1}],
    }
    return [(i, cfg.updated(v)) for i, v in enumerate(table[family])]


def _fibers(cfg, n=None):
    seeds = cfg.seeds
    n = cfg["verify.fibers"] if n is None else n
    base = seeds[0]
    return [seeds[i] if i < len(seeds) else base + 1000 + i for i in range(n)]


# -- families ------------------------------------------------------------------------

def _check_estimates(i, cfg):
    """Decay estimates on a fibre not used for calibration.

    The operator-norm ratios must stay below the fibre-free envelope over the
    sampled range of ``t - s``; the ratio to the calibrated constant is
    reported as ``info`` since it is a sampling statistic.
    """
    const = cfg.calibrated_constants()
    held_out = max(cfg.seeds) + 1
    gen = cfg.generator().on(cfg.path(held_out))
    rng = np.random.default_rng(held_out)
    alphas = sorted({0.0, *const.alphas})
    samples = draw_decay_samples(gen, rng, 256, alphas)
    tau_max = max(t - s for t, s, _, _ in samples)
    rows = verify_decay_estimates(gen, const, samples)
    out = []
    for r in rows:
        cid = f"estimates.{r.estimate}.alpha={r.alpha:.3g}"
        expo = const.eta - r.alpha if r.estimate == "E3" else r.alpha
        env = decay_envelope(cfg["instance.K"], expo, tau_max)
        status_detail = {"unbounded": r.unbounded, "samples": r.sample_count, "tau_max": tau_max}
        res = CheckResult.compare(f"{cid}.envelope[{i}]", r.fitted_constant, env, 1e-9, cfg,
                                  **status_detail)
        if r.unbounded:
            res = CheckResult(res.check_id, "fail", res.measured, res.bound, res.tolerance,
                              cfg.hash, status_detail)
        out.append(res)
        if r.estimate != "E3":
            out.append(CheckResult.info(f"{cid}.vs_calibrated[{i}]", r.fitted_constant / const.C(r.alpha),
                                        cfg, calibrated=const.C(r.alpha)))
    return out


def _check_cocycle(i, cfg):
    F, sigma, gen = cfg.nonlinearity(), cfg.sigma, cfg.generator()
    params = cfg.solver_params()
    linear = F.is_zero and sigma == 0
    bound = 1e-9 if linear else 5 * params.dt
    out = []
    for seed in _fibers(cfg, min(cfg["verify.fibers"], 3)):
        p = cfg.path(seed)
        u0 = cfg.initial_state(seed)
        for t, s in ((0.7, 0.3), (0.3, 0.7), (0.0, 0.5), (0.5, 0.0)):
            d = cocycle_defect(u0, t, s, p, gen, F, sigma, params)
            out.append(CheckResult.compare(f"cocycle.t={t},s={s}.seed={seed}[{i}]", d, bound, 0.0, cfg))
    return out


def _absorbing_ensemble(cfg, seed, n):
    K = cfg["instance.K"]
    rng = np.random.default_rng(10_000 + seed)
    k = np.arange(1, K + 1, dtype=float)
    d = rng.standard_normal((n, K)) / k
    d /= state_norm(d)[:, None]
    return d * np.geomspace(1.0, 1e3, n)[:, None]


def absorbing_inequality(cfg, seed, horizon=20.0, check_every=2.0, n_ic=None):
    """Worst ``||u(t)|| - RHS(t)`` of the absorbing estimate on one fibre.

    The solve starts on ``theta_{-horizon} w`` so that at time ``t`` the
    current fibre is ``theta_{t - horizon} w`` and the estimate reads
    ``||u(t)|| <= exp(-gap t)(2c||u0|| + sigma c_hat ||w'(t)||_{X_beta}) + rho(theta_{t-horizon} w)``.
    Returns ``(max excess, max ratio lhs/rhs, n_checks)``.
    """
    n_ic = cfg["verify.initial_conditions"] if n_ic is None else n_ic
    p = cfg.path(seed)
    const = cfg.calibrated_constants()
    gen, F, sigma = cfg.generator(), cfg.nonlinearity(), cfg.sigma
    params = cfg.solver_params(cfg["attractor.solver_dt"])
    start = shift(p, -horizon)
    u0 = _absorbing_ensemble(cfg, seed, n_ic)
    every = max(1, int(round(check_every / params.dt)))
    traj = pathwise_mild_solve(u0, horizon, start, gen, F, sigma, params, store_every=every)
    gap = const.drift_gap
    n0 = state_norm(u0)
    worst_excess, worst_ratio, n = -math.inf, 0.0, 0
    for t, states in zip(traj.times[1:], traj.coeffs[1:]):
        fiber = shift(p, t - horizon)
        spec = absorbing_radius(fiber, const, tail_tol=1e-4)
        wn = float(xbeta_norm(start, start.value(t), const.beta))
        rhs = np.exp(-gap * t) * (2 * const.c * n0 + sigma * const.c_hat * wn) + spec.rho
        lhs = state_norm(states)
        worst_excess = max(worst_excess, float(np.max(lhs - rhs)))
        worst_ratio = max(worst_ratio, float(np.max(lhs / rhs)))
        n += len(lhs)
    return worst_excess, worst_ratio, n


def _check_absorbing(i, cfg):
    out = []
    const = cfg.calibrated_constants()
    for seed in _fibers(cfg):
        excess, ratio, n = absorbing_inequality(cfg, seed)
        out.append(CheckResult.compare(f"absorbing.inequality.seed={seed}[{i}]", ratio, 1.0, 0.0, cfg,
                                       excess=excess, checks=n))
    if cfg.sigma == 0:
        spec = absorbing_radius(cfg.path(cfg.seeds[0]), const)
        exact = const.c * const.Cbar_F / const.drift_gap
        out.append(CheckResult.compare(f"absorbing.rho_sigma0[{i}]", abs(spec.rho - exact), 0.0,
                                       1e-12 * max(1.0, exact), cfg, rho=spec.rho))
    else:
        spec = absorbing_radius(cfg.path(cfg.seeds[0]), const)
        out.append(CheckResult.compare(f"absorbing.quadrature[{i}]", spec.quadrature_error,
                                       0.005 * spec.rho, 0.0, cfg, rho=spec.rho))
    return out


def _check_absorbing_time(i, cfg):
    """Absorbing times do not grow along the pullback.

    Checks ``T_{D, theta_{-t} w} <= T_{D, w}`` with one scan step of slack.
    """
    out = []
    step = 0.1
    for seed in _fibers(cfg, min(cfg["verify.fibers"], 3)):
        p = cfg.path(seed)
        const = cfg.calibrated_constants()
        delta = absorbing_radius(p, const, tail_tol=1e-4, delta_rule=cfg["attractor.delta_rule"]).delta
        for R in (1.0, 10.0, 1000.0):
            T0 = absorbing_time(p, const, R, delta, step, horizon=40.0)
            Ts = [absorbing_time(shift(p, -t), const, R, delta, step, horizon=40.0)
                  for t in (0.5, 1.0, 2.0, 5.0, 10.0, 20.0)]
            out.append(CheckResult.compare(f"absorbing_time.R={R:g}.seed={seed}[{i}]", max(Ts), T0,
                                           step + 1e-9, cfg, shifted=Ts))
    return out


def _pairs_in_ball(cfg, seed, radius, n):
    K = cfg["instance.K"]
    rng = np.random.default_rng(20_000 + seed)
    k = np.arange(1, K + 1, dtype=float)

    def draw():
        d = rng.standard_normal((n, K)) / k
        d /= state_norm(d)[:, None]
        return d * (radius * rng.uniform(0, 1, n))[:, None]

    return draw(), draw()


def _check_smoothing(i, cfg):
    out = []
    t_tilde = cfg["attractor.t_tilde"]
    gen, F, sigma, params = cfg.generator(), cfg.nonlinearity(), cfg.sigma, cfg.solver_params()
    for seed in _fibers(cfg, min(cfg["verify.fibers"], 3)):
        p = cfg.path(seed)
        const = cfg.calibrated_constants()
        kappa = smoothing_constant(const, t_tilde, headroom=1.1)
        spec = absorbing_radius(p, const, tail_tol=1e-4, delta_rule=cfg["attractor.delta_rule"])
        u, v = _pairs_in_ball(cfg, seed, spec.radius, cfg["verify.pairs"])
        end = pathwise_mild_solve(np.vstack([u, v]), t_tilde, p, gen, F, sigma, params,
                                  store_every=10**9).final
        n = len(u)
        q = state_norm(end[:n] - end[n:], const.eta) / state_norm(u - v)
        out.append(CheckResult.compare(f"smoothing.seed={seed}[{i}]", q.max(), kappa, 0.0, cfg,
                                       violations=int(np.sum(q > kappa)), pairs=n))
    return out


def _check_lipschitz(i, cfg):
    out = []
    gen, F, sigma, params = cfg.generator(), cfg.nonlinearity(), cfg.sigma, cfg.solver_params()
    c = cfg["constants.c"]
    for seed in _fibers(cfg, min(cfg["verify.fibers"], 3)):
        p = cfg.path(seed)
        u, v = _pairs_in_ball(cfg, seed, 5.0, cfg["verify.pairs"])
        rep = lipschitz_probe(p, gen, F, sigma, params, list(zip(u, v)), 2.0, c=c, tolerance=0.0)
        out.append(CheckResult.compare(f"lipschitz.seed={seed}[{i}]", rep.L_hat, rep.bound,
                                       0.05 * rep.bound, cfg, violations=rep.violations))
    return out


def compactness_bound(cfg, seeds):
    """Largest ``X_eta`` norm of ``phi(T_B, theta_{-T_B} w, u0)`` per fibre.

    ``T_B`` is the absorbing time of the ball ``B`` on each fibre and the
    initial data sit on the sphere of radius ``rho(theta_{-T_B} w) + delta``.
    """
    gen, F, sigma = cfg.generator(), cfg.nonlinearity(), cfg.sigma
    params = cfg.solver_params(cfg["attractor.solver_dt"])
    eta = cfg["attractor.eta"]
    const = cfg.calibrated_constants()
    worst = []
    times = []
    for seed in seeds:
        p = cfg.path(seed)
        spec = absorbing_radius(p, const, tail_tol=1e-4, delta_rule=cfg["attractor.delta_rule"])
        T_B = absorbing_time(p, const, spec.radius, spec.delta, 0.5, horizon=40.0)
        T_B = max(params.dt, math.ceil(T_B / params.dt) * params.dt)
        back = shift(p, -T_B)
        spec_b = absorbing_radius(back, const, tail_tol=1e-4, delta_rule=cfg["attractor.delta_rule"])
        u0 = _absorbing_ensemble(cfg, seed, cfg["verify.initial_conditions"])
        u0 = u0 / state_norm(u0)[:, None] * spec_b.radius
        end = pathwise_mild_solve(u0, T_B, back, gen, F, sigma, params, store_every=10**9).final
        worst.append(float(np.max(state_norm(end, eta))))
        times.append(T_B)
    return worst, times


def _check_compactness(i, cfg):
    n = cfg["verify.fibers"]
    seeds = _fibers(cfg, 2 * n)
    per_fiber, times = compactness_bound(cfg, seeds)
    half, full = max(per_fiber[:n]), max(per_fiber)
    drift = abs(full - half) / half
    return [
        # a NaN or infinite bound compares false and fails
        CheckResult.compare(f"compactness.x_eta_bound[{i}]", full, math.inf, 0.0, cfg,
                            absorbing_times=times),
        CheckResult.compare(f"compactness.doubling_drift[{i}]", drift, 0.10, 0.0, cfg,
                            half=half, full=full),
    ]


def _check_dimension(i, cfg):
    out = []
    gen, F, sigma = cfg.generator(), cfg.nonlinearity(), cfg.sigma
    params = cfg.solver_params(cfg["attractor.solver_dt"])
    eta = cfg["attractor.eta"]
    K = cfg["instance.K"]
    er = cfg["attractor.eps_range"]
    eps = np.geomspace(er[0], er[1], cfg["attractor.eps_count"])
    p = cfg.path(cfg.seeds[0])
    const = cfg.calibrated_constants()
    kappa = smoothing_constant(const, cfg["attractor.t_tilde"])
    nus = cfg["attractor.nu_grid"]
    bound = min(dimension_bound(nu, eta, kappa, K).bound for nu in nus)
    ens = InitialEnsemble(cfg["attractor.ensemble_law"], max(cfg["attractor.ensemble_count"], 100),
                          cfg["attractor.ensemble_radius"], cfg["attractor.ensemble_seed"])
    for T in cfg["attractor.T"]:
        cloud = pullback_cloud(ens, T, p, gen, F, sigma, params)
        box = box_counting(cloud, eps)
        out.append(CheckResult.compare(f"dimension.box_vs_bound.T={T:g}[{i}]", box.dimension, bound,
                                       0.0, cfg, ci=box.ci))
    if i == 0:
        for eta_s, eps_s, Ks in ((0.5, 0.3, 4), (0.25, 0.3, 4), (0.75, 0.3, 4), (0.5, 0.1, 2), (0.5, 0.2, 3)):
            cov = covering_number(eta_s, eps_s, Ks, lower_bound=True)
            # measured = lower bound, bound = upper bound
            out.append(CheckResult.compare(f"dimension.packing_le_cover.eta={eta_s},eps={eps_s},K={Ks}",
                                           cov.lower, cov.count, 0.0, cfg))
    return out


_FAMILIES = {
    "estimates": _check_estimates,
    "cocycle": _check_cocycle,
    "absorbing": _check_absorbing,
    "absorbing_time": _check_absorbing_time,
    "smoothing": _check_smoothing,
    "lipschitz": _check_lipschitz,
    "compactness": _check_compactness,
    "dimension": _check_dimension,
}

SUITES = {
    "estimates": ("estimates",),
    "cocycle": ("cocycle",),
    "absorbing": ("absorbing", "absorbing_time"),
    "smoothing": ("smoothing",),
    "lipschitz": ("lipschitz",),
    "compactness": ("compactness",),
    "dimension": ("dimension",),
    "all": tuple(_FAMILIES),
}


def run_suite(suite, config=None, threads=1):
    """Run every family of ``suite`` over its configuration variants.

    Results come back in a fixed order (family, variant, check) regardless of
    ``threads``.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    cfg = RunConfig() if config is None else config
    if not cfg.seeds:
        raise ValueError("noise.seeds must be non-empty")
    jobs = []
    for fam in SUITES[suite]:
        for i, var in _variants(cfg, fam):
            jobs.append((fam, i, var))

    def run(job):
        fam, i, var = job
        try:
            return _FAMILIES[fam](i, var)
        except Exception as exc:  # attach context, keep the type
            raise type(exc)(f"[{fam} variant {i}] {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, jobs))
    else:
        chunks = [run(j) for j in jobs]
    return [r for chunk in chunks for r in chunk]


# -- results files ------------------------------------------------------------------

_SCHEMA = ("check_id", "status", "measured", "bound", "tolerance", "config_hash")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_results(results, file):
    data = {"schema": list(_SCHEMA), "results": [_jsonable(asdict(r)) for r in results]}
    with open(file, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)


def read_results(file):
    with open(file) as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or data.get("schema") != list(_SCHEMA):
        raise ValueError(f"{file}: results schema mismatch")
    out = []
    for row in data["results"]:
        nan = lambda v: math.nan if v is None else v  # noqa: E731
        out.append(CheckResult(row["check_id"], row["status"], nan(row["measured"]), nan(row["bound"]),
                               nan(row["tolerance"]), row["config_hash"], row.get("detail", {})))
    return out


def regression_baseline(path, results, rel_tol=1e-9):
    """Compare ``results`` with a stored baseline file.

    Every check is classified ``unchanged``, ``improvement`` (smaller measured
    value), ``regression`` (larger), ``status_change``, ``added`` or
    ``removed``.  A missing baseline raises :class:`FileNotFoundError`.
    """
    try:
        base = {r.check_id: r for r in read_results(path)}
    except FileNotFoundError:
        raise FileNotFoundError(f"baseline file {path} does not exist") from None
    cur = {r.check_id: r for r in results}
    report = {}
    for cid in sorted(set(base) | set(cur)):
        if cid not in base:
            report[cid] = {"kind": "added"}
            continue
        if cid not in cur:
            report[cid] = {"kind": "removed"}
            continue
        b, c = base[cid], cur[cid]
        drift = c.measured - b.measured
        scale = max(abs(b.measured), 1e-300)
        if b.status != c.status:
            kind = "status_change"
        elif abs(drift) <= rel_tol * scale or (math.isnan(b.measured) and math.isnan(c.measured)):
            kind = "unchanged"
        elif drift < 0:
            kind = "improvement"
        else:
            kind = "regression"
        report[cid] = {"kind": kind, "baseline": b.measured, "current": c.measured,
                       "ratio": c.measured / b.measured if b.measured else math.nan}
    return report


def summary_table(results):
    """Plain-text pass/fail matrix: one line per check."""
    width = max((len(r.check_id) for r in results), default=10)
    lines = [f"{'check':<{width}}  status  {'measured':>12}  {'bound':>12}"]
    for r in results:
        lines.append(f"{r.check_id:<{width}}  {r.status:<6}  {r.measured:>12.5g}  {r.bound:>12.5g}")
    n_fail = sum(r.status == "fail" for r in results)
    lines.append(f"{len(results)} checks, {n_fail} failed")
    return "\n".join(lines)
