"""Absorbing radius, smoothing constant, covering numbers and attractor clouds.

Norms follow the rest of the package: ``||u||_X^2 = (pi/2) sum c_k^2`` and
``||u||_{X_eta}^2 = (pi/2) sum mu_k^{2 eta} c_k^2``.  In the scaled
coordinates ``y = sqrt(pi/2) c`` the X-norm is Euclidean and the unit ball of
``X_eta`` is the ellipsoid with semi-axes ``mu_k^{-eta} = k^{-2 eta}``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal, special, stats

from ._validation import CoverageError, check_in_interval, check_positive
from .noise import NoisePath, shift, xbeta_norm, xbeta_variance_rate
from .operator import EstimateConstants, GeneratorFamily, state_norm
from .solver import Nonlinearity, SolverParams, pathwise_mild_solve

__all__ = [
    "AbsorbingSpec",
    "AttractorCloud",
    "CoveringCount",
    "DimensionReport",
    "BoxDimension",
    "RateFit",
    "InitialEnsemble",
    "absorbing_radius",
    "absorbing_time",
    "pullback_cloud",
    "smoothing_constant",
    "covering_number",
    "greedy_packing_count",
    "greedy_cover_count",
    "dimension_bound",
    "dimension_sweep",
    "box_counting",
    "attraction_rate",
    "hausdorff_semidistance",
]

_SQRT_HALF_PI = math.sqrt(0.5 * math.pi)


# -- absorbing radius ---------------------------------------------------------

@dataclass(frozen=True)
class AbsorbingSpec:
    """Radius of the pullback absorbing ball ``B(0, rho + delta)``.

    ``components`` holds the drift, exponential-convolution and singular
    convolution terms in that order; ``tail_bound`` bounds what the
    truncation of the history at ``t_min`` leaves out and
    ``quadrature_error`` is the change under the last refinement level.
    """

    rho: float
    delta: float
    components: tuple
    fiber: dict
    t_min: float
    tail_bound: float = 0.0
    quadrature_error: float = 0.0

    def __post_init__(self):
        if len(self.components) != 3 or min(self.components) < 0:
            raise ValueError("components must be three non-negative terms")
        if not math.isclose(self.rho, sum(self.components), rel_tol=1e-12, abs_tol=1e-300):
            raise ValueError("rho must equal the sum of its components")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")

    @property
    def radius(self) -> float:
        return self.rho + self.delta

    def to_dict(self):
        d = asdict(self)
        d["components"] = dict(zip(("drift", "exp_convolution", "singular_convolution"),
                                   self.components))
        return d


def _gamma_moment(p, rate, x):
    """``int_0^x exp(-rate r) r^(p-1) dr`` for arrays ``x`` (rate > 0)."""
    return rate ** (-p) * special.gamma(p) * special.gammainc(p, rate * x)


def _cell_moments(p, rate, r):
    """Per-cell ``int exp(-rate r) r^(p-1)`` over ``[r_j, r_{j+1}]``.

    Uses upper incomplete gamma differences past the mode to avoid
    cancellation between numbers close to ``Gamma(p)``.
    """
    x = rate * r
    scale = rate ** (-p) * special.gamma(p)
    lower = special.gammainc(p, x)
    upper = special.gammaincc(p, x)
    d_lower = np.diff(lower)
    d_upper = -np.diff(upper)
    use_upper = x[:-1] > p
    return scale * np.where(use_upper, d_upper, d_lower)


def _product_integral(r, N, rate, beta_weight):
    """``int exp(-rate r) r^(beta_weight - 1) N(r) dr`` for piecewise-linear ``N``."""
    h = np.diff(r)
    m0 = _cell_moments(beta_weight, rate, r)
    m1 = _cell_moments(beta_weight + 1.0, rate, r)
    slope = np.diff(N) / h
    return float(np.sum(N[:-1] * m0 + slope * (m1 - r[:-1] * m0)))


def _history(omega, beta):
    """Past times ``r = -s >= 0`` (node spacing) and ``||w(-r)||_{X_beta}``."""
    o = omega.offset
    cum = omega._data.cum
    vals = cum[o::-1] - cum[o]
    return np.arange(o + 1) * omega.dt, xbeta_norm(omega, vals, beta)


def _refined_history(omega, beta, r, N, cells, level):
    """Replace the first ``cells`` cells by ``2**level`` sub-cells with exact norms."""
    if level == 0 or cells == 0:
        return r, N
    cells = min(cells, len(r) - 1)
    o = omega.offset
    cum = omega._data.cum
    sub = 2**level
    frac = np.arange(sub) / sub
    rr, NN = [], []
    for j in range(cells):
        a = cum[o - j] - cum[o]
        b = cum[o - j - 1] - cum[o]
        vals = (1.0 - frac)[:, None] * a + frac[:, None] * b
        rr.append(r[j] + frac * (r[j + 1] - r[j]))
        NN.append(xbeta_norm(omega, vals, beta))
    return np.concatenate(rr + [r[cells:]]), np.concatenate(NN + [N[cells:]])


def _tail(rate, weight_power, R, N_R, c_sd):
    """Bound on ``int_R^inf exp(-rate r) r^(p-1) N(r) dr`` with ``N(r) <= N_R + 3 c_sd sqrt(r-R)``."""
    pref = R ** (weight_power - 1.0) if weight_power <= 1.0 else 1.0
    return pref * math.exp(-rate * R) * (N_R / rate + 3.0 * c_sd * special.gamma(1.5) / rate**1.5)


def absorbing_radius(omega: NoisePath, constants: EstimateConstants, refinement=6,
                     tail_tol=1e-6, delta_rule=0.05) -> AbsorbingSpec:
    """Evaluate ``rho(w)`` on the stored history of ``omega``.

    Parameters
    ----------
    omega : NoisePath
        Fibre; the history ``[t_min, 0]`` replaces ``(-inf, 0]``.
    constants : EstimateConstants
        Must carry ``C(1 - beta)`` when ``sigma > 0``.
    refinement : int
        Graded levels: the cells next to ``s = 0`` are split into
        ``2**refinement`` sub-cells where the norm is re-evaluated exactly.
    tail_tol : float
        Maximal relative size of the truncated tail before
        :class:`CoverageError` is raised.
    delta_rule : float
        ``delta = delta_rule * rho`` unless ``constants.delta`` is set; when
        ``rho = 0`` the fallback is ``1e-3``.
    """
    c, lam, CF = constants.c, constants.lam, constants.C_F
    gap = constants.drift_gap
    sigma, beta = constants.sigma, constants.beta
    drift = c * constants.Cbar_F / gap
    t_min = -omega.offset * omega.dt
    fiber = {"seed": omega.seed, "offset": omega.offset}
    exp_term = sing_term = 0.0
    tail = qerr = 0.0
    if sigma > 0:
        if omega.offset < 2:
            raise CoverageError("absorbing radius needs stored history before t = 0")
        r, N = _history(omega, beta)
        R = r[-1]
        c_sd = math.sqrt(xbeta_variance_rate(omega.K, beta, omega.gamma, omega.scale))
        C1b = constants.C(1.0 - beta)
        sing_pref = sigma * C1b * lam / gap

        def singular(level):
            rr, NN = _refined_history(omega, beta, r, N, 8, level)
            return _product_integral(rr, NN, lam, beta)

        sing_int = singular(refinement)
        qerr = sing_pref * abs(sing_int - singular(max(refinement - 1, 0)))
        sing_term = sing_pref * sing_int
        tails = [sing_pref * _tail(lam, beta, R, N[-1], c_sd)]
        if CF > 0:
            k = c * CF
            exp_pref = c * CF * sigma * constants.c_hat
            exp_term = exp_pref * _product_integral(r, N, k, 1.0)
            tails.append(exp_pref * _tail(k, 1.0, R, N[-1], c_sd))
        tail = float(sum(tails))
        noise_part = exp_term + sing_term
        if noise_part > 0 and tail > tail_tol * noise_part:
            raise CoverageError(
                f"t_min={t_min:g} too shallow: truncated tail {tail:.3e} exceeds "
                f"{tail_tol:g} of the noise terms {noise_part:.3e}"
            )
    rho = drift + exp_term + sing_term
    delta = constants.delta if constants.delta is not None else (delta_rule * rho if rho > 0 else 1e-3)
    return AbsorbingSpec(float(rho), float(delta), (float(drift), float(exp_term), float(sing_term)),
                         fiber, float(t_min), float(tail), float(qerr))


def absorbing_time(omega: NoisePath, constants: EstimateConstants, radius, delta,
                   scan_step=0.1, horizon=None):
    """Smallest scan time after which ``exp(-gap t)(2c R + sigma c_hat ||w(-t)||_{X_beta}) < delta``.

    The condition is checked on ``t = 0, scan_step, ...`` up to ``horizon``
    (default: the stored history).  Returns ``inf`` if it still fails at the
    last scanned time.
    """
    check_positive(delta, "delta")
    gap = constants.drift_gap
    step = max(1, int(round(scan_step / omega.dt)))
    o = omega.offset
    last = o if horizon is None else min(o, int(round(horizon / omega.dt)))
    idx = o - np.arange(0, last + 1, step)
    t = (o - idx) * omega.dt
    cum = omega._data.cum
    norms = xbeta_norm(omega, cum[idx] - cum[o], constants.beta)
    f = np.exp(-gap * t) * (2 * constants.c * radius + constants.sigma * constants.c_hat * norms)
    bad = np.flatnonzero(f >= delta)
    if bad.size == 0:
        return 0.0
    if bad[-1] == len(t) - 1:
        return math.inf
    return float(t[bad[-1] + 1])


# -- ensembles and clouds -----------------------------------------------------

@dataclass(frozen=True)
class InitialEnsemble:
    """Sampling law for initial data.

    ``law`` is ``"sphere"`` (norm exactly ``radius``), ``"ball"`` (norm uniform
    in ``[0, radius]``), ``"log_radius"`` (norm log-uniform in
    ``[radius / 1e3, radius]``) or ``"zero"``.  Directions have ``k^-1``
    spectral decay.
    """

    law: str = "sphere"
    count: int = 16
    radius: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.law not in ("sphere", "ball", "log_radius", "zero"):
            raise ValueError(f"unknown ensemble law {self.law!r}")
        if int(self.count) < 1:
            raise ValueError("ensemble count must be >= 1")
        check_positive(self.radius, "radius", strict=False)

    def sample(self, K):
        n = int(self.count)
        if self.law == "zero" or self.radius == 0:
            return np.zeros((n, K))
        rng = np.random.default_rng(self.seed)
        k = np.arange(1, K + 1, dtype=float)
        d = rng.standard_normal((n, K)) / k
        d /= state_norm(d)[:, None]
        if self.law == "sphere":
            r = np.full(n, self.radius)
        elif self.law == "ball":
            r = self.radius * rng.uniform(0, 1, n)
        else:
            r = self.radius * np.exp(rng.uniform(np.log(1e-3), 0.0, n))
        return d * r[:, None]


@dataclass
class AttractorCloud:
    """Terminal states of a pullback ensemble at ``pullback_time``."""

    points: np.ndarray
    pullback_time: float
    fiber: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)
    max_norm: float = 0.0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 0:
            raise ValueError("attractor cloud is empty")
        self.max_norm = float(np.max(state_norm(self.points)))

    def __len__(self):
        return self.points.shape[0]

    @property
    def diameter(self) -> float:
        y = self.points * _SQRT_HALF_PI
        if len(y) > 2000:
            y = y[:: len(y) // 2000 + 1]
        sq = np.sum(y * y, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2 * y @ y.T
        return float(np.sqrt(max(d2.max(), 0.0)))

    def write_csv(self, file):
        K = self.points.shape[1]
        with open(file, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"coeff_{k}" for k in range(1, K + 1)])
            for row in self.points:
                w.writerow([f"{x:.17g}" for x in row])


class AbsorptionError(AssertionError):
    """A pullback state left the absorbing ball."""


def pullback_cloud(ensemble, T, omega, gen, F, sigma, params=None, spec=None):
    """``phi(T, theta_{-T} w, u0)`` for every ``u0`` of the ensemble.

    ``ensemble`` is an :class:`InitialEnsemble` or an array ``(n, K)``.  When
    ``spec`` is given every terminal norm must lie in ``B(0, rho + delta)``;
    otherwise :class:`AbsorptionError` is raised.
    """
    params = SolverParams() if params is None else params
    if isinstance(ensemble, InitialEnsemble):
        u0 = ensemble.sample(gen.K)
        desc = asdict(ensemble)
    else:
        u0 = np.atleast_2d(np.asarray(ensemble, dtype=float))
        desc = {"law": "explicit", "count": len(u0)}
    back = shift(omega, -T)
    traj = pathwise_mild_solve(u0, T, back, gen, F, sigma, params, store_every=10**9)
    cloud = AttractorCloud(traj.final, float(T), {"seed": omega.seed, "offset": omega.offset}, desc)
    if spec is not None and cloud.max_norm > spec.radius:
        raise AbsorptionError(
            f"pullback state of norm {cloud.max_norm:.6g} outside the absorbing ball "
            f"of radius {spec.radius:.6g} at T={T}"
        )
    return cloud


# -- smoothing constant ---------------------------------------------------------

def smoothing_constant(constants: EstimateConstants, t_tilde, eta=None, form="proof",
                       headroom=1.0):
    """Smoothing constant ``kappa`` of the X -> X_eta Lipschitz estimate.

    ``form="proof"`` uses ``C_eta / t^eta + C_F C_eta c exp(c C_F / lam) I``
    and ``form="statement"`` drops the ``t^-eta`` factor of the first term,
    where ``I = int_0^t exp(-lam s) s^-eta ds`` is evaluated in closed form
    through the regularised incomplete gamma function.  ``headroom``
    multiplies the fitted ``C_eta``.
    """
    check_positive(t_tilde, "t_tilde")
    eta = constants.eta if eta is None else eta
    check_in_interval(eta, "eta", 0.0, 1.0)
    if form not in ("proof", "statement"):
        raise ValueError("form must be 'proof' or 'statement'")
    C_eta = headroom * constants.C(eta)
    lam, c, CF = constants.lam, constants.c, constants.C_F
    first = C_eta / t_tilde**eta if form == "proof" else C_eta
    integral = float(_gamma_moment(1.0 - eta, lam, t_tilde))
    return float(first + CF * C_eta * c * math.exp(c * CF / lam) * integral)


# -- covering numbers -------------------------------------------------------------

@dataclass(frozen=True)
class CoveringCount:
    """Upper bound on ``N_eps(B^{X_eta}(0,1))`` in X at truncation ``K``.

    ``log2_count`` is the base-2 logarithm (counts overflow quickly);
    ``modes`` is the number of gridded modes and ``tail`` the radius left to
    the neglected modes.  ``truncated`` signals that the truncation ``K``
    itself cut off semi-axes above ``eps``.
    """

    eta: float
    eps: float
    K: int
    log2_count: float
    modes: int
    tail: float
    truncated: bool
    lower: int | None = None

    @property
    def count(self) -> float:
        return 2.0**self.log2_count


def _semi_axes(eta, K):
    return np.arange(1, K + 1, dtype=float) ** (-2.0 * eta)


def _axis_cells(axes, budget):
    """Per-axis cell counts ``n_k`` with ``sum (a_k / n_k)^2 <= budget``.

    Water-filling: every axis longer than a common half-width ``h`` gets
    ``ceil(a_k / h)`` cells, shorter axes a single cell; ``h`` is the largest
    value (found by bisection) meeting the budget.  A final pass removes
    refinements the leftover budget does not need.
    """
    axes = np.asarray(axes, dtype=float)

    def counts(h):
        return np.maximum(1, np.ceil(axes / h - 1e-12)).astype(np.int64)

    def load(n):
        return float(np.sum((axes / n) ** 2))

    lo, hi = 0.0, float(axes.max())
    if load(counts(hi)) <= budget:
        n = counts(hi)
    else:
        lo = hi * 1e-9
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if load(counts(mid)) <= budget:
                lo = mid
            else:
                hi = mid
        n = counts(lo)
    slack = budget - load(n)
    for k in np.argsort(-n, kind="stable")[: 64]:
        while n[k] > 1:
            extra = axes[k] ** 2 * (1.0 / (n[k] - 1) ** 2 - 1.0 / n[k] ** 2)
            if extra > slack:
                break
            slack -= extra
            n[k] -= 1
    return n


def _log_cells_in_ellipsoid(axes, cells, bins=4096):
    """Natural log of the number of grid cells meeting the ellipsoid.

    Axis ``k`` is split into ``cells[k]`` equal cells over ``[-a_k, a_k]``.  A
    cell meets the ellipsoid iff ``sum_k min_cell x_k^2 / a_k^2 <= 1``; the
    budget is discretised with costs rounded down, so the result never
    undercounts.  The per-axis cost histograms are convolved with FFTs and
    renormalised after every axis.
    """
    dist = np.zeros(bins + 1)
    dist[0] = 1.0
    offset = 0.0
    for n in cells:
        n = int(n)
        if n <= 2:
            # every cell touches the origin: cost 0, multiplicity n
            offset += math.log(n)
            continue
        edges = np.linspace(-1.0, 1.0, n + 1)
        lo, hi = edges[:-1], edges[1:]
        near = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(lo * lo, hi * hi))
        cost = np.floor(near * bins * (1 - 1e-12)).astype(np.int64)
        hist = np.bincount(cost[cost <= bins], minlength=bins + 1).astype(float)
        dist = np.clip(signal.fftconvolve(dist, hist)[: bins + 1], 0.0, None)
        peak = dist.max()
        dist /= peak
        offset += math.log(peak)
    return float(math.log(dist.sum()) + offset)


def _slab_log_count(axes, tail, eps, n1):
    """Cells needed when the leading axis is cut into ``n1`` slabs.

    Inside a slab whose nearest face sits at relative cost ``c`` the other
    axes and the tail shrink by ``sqrt(1 - c)``, so each slab is gridded on
    its own budget ``eps^2 - h_1^2 - tail^2 (1 - c)``.
    """
    a1 = axes[0]
    h1 = a1 / n1
    edges = np.linspace(-1.0, 1.0, n1 + 1)
    lo, hi = edges[:-1], edges[1:]
    costs = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(lo * lo, hi * hi))
    total = []
    cache = {}
    for cst in costs:
        if cst in cache:
            total.append(cache[cst])
            continue
        scale = math.sqrt(max(1.0 - cst, 0.0))
        budget = eps * eps - h1 * h1 - (tail * scale) ** 2
        if budget <= 0:
            return math.inf
        rest = axes[1:] * scale
        val = _log_cells_in_ellipsoid(rest, _axis_cells(rest, budget))
        cache[cst] = val
        total.append(val)
    return float(special.logsumexp(total))


def covering_number(eta, eps, K, lower_bound=False):
    """Covering count of the ``X_eta`` unit ball by ``eps``-balls of X.

    The leading ``d`` modes are split into ``n_k`` equal cells per axis with
    ``sum (a_k / n_k)^2 + a_{d+1}^2 <= eps^2`` and only cells meeting the
    ellipsoid are counted; the remaining modes fit in a slab of radius
    ``a_{d+1}``, so every cell centre is an ``eps``-ball centre.  ``d`` is
    chosen to minimise the count.  With ``lower_bound=True`` and ``K <= 4`` a
    greedy packing count is attached as a lower bound.
    """
    check_positive(eps, "eps")
    check_in_interval(eta, "eta", 0.0, 1.0, closed=(False, True))
    K = int(K)
    a = _semi_axes(eta, K)
    lower = greedy_packing_count(eta, eps, K) if lower_bound and K <= 4 else None
    if eps >= a[0]:
        return CoveringCount(eta, eps, K, 0.0, 0, float(a[0]), False, lower)
    best = None
    d_min = int(np.argmax(np.append(a[1:], 0.0) < eps)) + 1
    candidates = sorted({min(K, max(d_min, int(round(d_min * f))))
                         for f in (1.0, 1.1, 1.25, 1.5, 2.0, 3.0)} | {min(K, d_min + 1)})
    for d in candidates:
        tail = a[d] if d < K else 0.0
        cells = _axis_cells(a[:d], eps * eps - tail * tail)
        logn = _log_cells_in_ellipsoid(a[:d], cells)
        if d >= 2 and cells[0] <= 64:
            for n1 in range(max(1, cells[0] - 2), cells[0] + 4):
                logn = min(logn, _slab_log_count(a[:d], tail, eps, n1))
        logn /= math.log(2.0)
        if best is None or logn < best[0]:
            best = (logn, d, tail)
    truncated = (K + 1) ** (-2.0 * eta) >= eps
    return CoveringCount(eta, eps, K, float(best[0]), best[1], float(best[2]), bool(truncated), lower)


def _ellipsoid_lattice(eta, K, spacing):
    a = _semi_axes(eta, K)
    axes = [np.arange(-math.floor(ak / spacing), math.floor(ak / spacing) + 1) * spacing for ak in a]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, K)
    inside = np.sum((mesh / a) ** 2, axis=1) <= 1.0 + 1e-12
    return mesh[inside]


def greedy_packing_count(eta, eps, K, spacing=None):
    """Size of a greedy ``2 eps``-separated subset of lattice points in the ellipsoid.

    Any ``eps``-ball holds at most one point of such a set, so this is a lower
    bound on the covering number.  Meant for ``K <= 4``.
    """
    spacing = eps / 4 if spacing is None else spacing
    pts = _ellipsoid_lattice(eta, K, spacing)
    order = np.argsort(np.sum(pts * pts, axis=1))[::-1]
    chosen = []
    for p in pts[order]:
        if not chosen or np.min(np.sum((np.asarray(chosen) - p) ** 2, axis=1)) > (2 * eps) ** 2:
            chosen.append(p)
    return len(chosen)


def greedy_cover_count(eta, eps, K, spacing=None):
    """Greedy set cover of the ellipsoid lattice by ``eps``-balls centred on lattice points."""
    spacing = eps / 4 if spacing is None else spacing
    pts = _ellipsoid_lattice(eta, K, spacing)
    d2 = np.sum(pts * pts, axis=1)[:, None] + np.sum(pts * pts, axis=1)[None, :] - 2 * pts @ pts.T
    cover = d2 <= eps * eps * (1 + 1e-12)
    uncovered = np.ones(len(pts), dtype=bool)
    count = 0
    while uncovered.any():
        gain = cover[:, uncovered].sum(axis=1)
        j = int(np.argmax(gain))
        uncovered &= ~cover[j]
        count += 1
    return count


# -- dimension bound ------------------------------------------------------------------

@dataclass
class DimensionReport:
    nu: float
    eta: float
    kappa: float
    log2_covering_count: float
    bound: float
    K: int
    empirical_dim: float | None = None
    empirical_ci: tuple | None = None
    eps_range: tuple | None = None
    sweep: dict | None = None

    @property
    def covering_count(self) -> float:
        return 2.0**self.log2_covering_count

    def to_dict(self):
        return asdict(self)


def dimension_bound(nu, eta, kappa, K) -> DimensionReport:
    """``log_{1/(2 nu)} N_{nu/kappa}(B^{X_eta}(0,1))`` at truncation ``K``."""
    check_in_interval(nu, "nu", 0.0, 0.5)
    check_positive(kappa, "kappa")
    cov = covering_number(eta, nu / kappa, K)
    bound = cov.log2_count / math.log2(1.0 / (2.0 * nu))
    return DimensionReport(float(nu), float(eta), float(kappa), cov.log2_count, float(bound), int(K))


def dimension_sweep(nus, eta, kappa, K):
    """Bound over a grid of ``nu``; returns ``(nus, bounds, argmin_nu, min_bound)``."""
    nus = np.asarray(nus, dtype=float)
    bounds = np.array([dimension_bound(nu, eta, kappa, K).bound for nu in nus])
    j = int(np.argmin(bounds))
    return nus, bounds, float(nus[j]), float(bounds[j])


# -- box counting ---------------------------------------------------------------------

@dataclass(frozen=True)
class BoxDimension:
    dimension: float
    ci: tuple
    eps: np.ndarray
    counts: np.ndarray
    modes: np.ndarray
    degenerate: bool = False


def box_counting(cloud, eps_range=None, relative=True, confidence=0.95):
    """Least-squares box-counting slope of a point cloud.

    Parameters
    ----------
    cloud : AttractorCloud or array (n, K)
        At least 100 points.
    eps_range : sequence of float, optional
        Box sizes spanning at least one decade.  With ``relative=True`` they
        are fractions of the cloud diameter; the default is 10 geometric
        sizes between 0.02 and 0.5.
    """
    pts = cloud.points if isinstance(cloud, AttractorCloud) else np.atleast_2d(np.asarray(cloud, float))
    if len(pts) < 100:
        raise ValueError("box counting needs at least 100 points")
    y = pts * _SQRT_HALF_PI
    y = y - y.mean(axis=0)
    diam = float(np.max(np.linalg.norm(y - y[0], axis=1))) * 2.0
    if diam == 0.0 or np.all(np.ptp(y, axis=0) == 0):
        return BoxDimension(0.0, (0.0, 0.0), np.array([]), np.array([]), np.array([]), True)
    eps = np.geomspace(0.02, 0.5, 10) if eps_range is None else np.asarray(eps_range, float)
    if eps.max() / eps.min() < 10 * (1 - 1e-9):
        raise ValueError("eps_range must span at least one decade")
    if relative:
        eps = eps * diam
    # tail[m] = max over points of ||y[:, m:]||
    tails = np.sqrt(np.max(np.cumsum((y * y)[:, ::-1], axis=1)[:, ::-1], axis=0))
    tails = np.append(tails, 0.0)
    counts, modes = [], []
    for e in eps:
        m = int(np.argmax(tails < e / 2))
        m = max(m, 1)
        boxes = np.floor(y[:, :m] / e).astype(np.int64)
        counts.append(len(np.unique(boxes, axis=0)))
        modes.append(m)
    counts = np.asarray(counts, float)
    fit = stats.linregress(np.log(1.0 / eps), np.log(counts))
    tq = stats.t.ppf(0.5 + confidence / 2, len(eps) - 2)
    ci = (fit.slope - tq * fit.stderr, fit.slope + tq * fit.stderr)
    return BoxDimension(float(fit.slope), (float(ci[0]), float(ci[1])), eps, counts, np.asarray(modes))


# -- attraction rate ----------------------------------------------------------------------

def hausdorff_semidistance(A, B):
    """``sup_{a in A} inf_{b in B} ||a - b||_X`` for coefficient arrays."""
    A = np.atleast_2d(A) * _SQRT_HALF_PI
    B = np.atleast_2d(B) * _SQRT_HALF_PI
    if len(B) == 0:
        raise ValueError("proxy set is empty")
    d2 = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2 * A @ B.T
    return float(np.sqrt(max(np.max(np.min(d2, axis=1)), 0.0)))


@dataclass(frozen=True)
class RateFit:
    alpha: float
    ci: tuple
    s: np.ndarray
    distances: np.ndarray

    @property
    def significant(self) -> bool:
        return self.ci[0] > 0


def attraction_rate(ensemble, proxy, s_grid, omega, gen, F, sigma, params=None, confidence=0.95):
    """Exponential rate of ``d(phi(s, theta_{-s} w, D), M)`` over ``s_grid``.

    ``proxy`` is an :class:`AttractorCloud` or coefficient array standing in
    for the attractor.  The rate is minus the least-squares slope of
    ``log d`` against ``s``.
    """
    params = SolverParams() if params is None else params
    M = proxy.points if isinstance(proxy, AttractorCloud) else np.atleast_2d(proxy)
    if M.size == 0:
        raise ValueError("proxy cloud is empty")
    s_grid = np.asarray(s_grid, dtype=float)
    if len(s_grid) < 3 or np.any(np.diff(s_grid) <= 0):
        raise ValueError("s_grid must hold at least three increasing times")
    u0 = ensemble.sample(gen.K) if isinstance(ensemble, InitialEnsemble) else np.atleast_2d(ensemble)
    d = np.array([
        hausdorff_semidistance(
            pathwise_mild_solve(u0, s, shift(omega, -s), gen, F, sigma, params, store_every=10**9).final,
            M,
        )
        for s in s_grid
    ])
    if np.any(d <= 0):
        raise ValueError("zero distance: ensemble already on the proxy; rate undefined")
    fit = stats.linregress(s_grid, np.log(d))
    tq = stats.t.ppf(0.5 + confidence / 2, len(s_grid) - 2)
    alpha = -fit.slope
    return RateFit(float(alpha), (float(alpha - tq * fit.stderr), float(alpha + tq * fit.stderr)), s_grid, d)
