"""Random nonautonomous generator ``A(theta_t w) = Laplacian + a(theta_t w)``.

The instance lives on ``(0, pi)`` with Dirichlet conditions, so the sine
modes ``e_k = sin(k x)`` diagonalise every ``A(t)`` with eigenvalues
``-k**2 + a(t)``.  The potential is a clipped OU process,
``a = a0 + eps * tanh(z)``.  Fractional powers use the frozen base ``-Laplacian``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import ConditionError, CoverageError, check_coeffs, check_in_interval
from .noise import NoisePath, OUParams, ou_potential_nodes

__all__ = [
    "SpectralState",
    "GeneratorFamily",
    "EstimateConstants",
    "HolderFit",
    "DecayEstimateRow",
    "potential",
    "apply_A",
    "fractional_power",
    "evolution_multipliers",
    "check_holder",
    "verify_decay_estimates",
    "draw_decay_samples",
    "write_decay_csv",
    "calibrate_constants",
    "decay_envelope",
    "fitted_table",
    "state_norm",
    "eigenvalues",
]

_HALF_PI = 0.5 * np.pi


def eigenvalues(K) -> np.ndarray:
    k = np.arange(1, K + 1, dtype=float)
    return k * k


@dataclass(frozen=True, eq=False)
class SpectralState:
    """Coefficients of a function in the Dirichlet sine basis of ``(0, pi)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        arr = check_coeffs(self.coeffs)
        if arr.ndim != 1:
            raise ValueError("SpectralState expects a 1-D coefficient vector")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @property
    def K(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def basis(cls, k, K):
        c = np.zeros(K)
        c[k - 1] = 1.0
        return cls(c)

    def norm(self, eta=0.0) -> float:
        """``X_eta`` norm, ``sqrt(pi/2 * sum mu_k^(2 eta) c_k^2)``."""
        return float(state_norm(self.coeffs, eta))

    def __add__(self, other):
        return SpectralState(self.coeffs + _coeffs(other))

    def __sub__(self, other):
        return SpectralState(self.coeffs - _coeffs(other))

    def __mul__(self, scalar):
        return SpectralState(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralState(-self.coeffs)

    def __eq__(self, other):
        return isinstance(other, SpectralState) and np.array_equal(self.coeffs, other.coeffs)

    def __repr__(self):
        return f"SpectralState(K={self.K}, norm={self.norm():.6g})"


def _coeffs(u):
    return u.coeffs if isinstance(u, SpectralState) else np.asarray(u, dtype=float)


def state_norm(coeffs, eta=0.0):
    """``X_eta`` norm along the last axis of a coefficient array."""
    c = np.asarray(coeffs, dtype=float)
    if eta == 0.0:
        return np.sqrt(_HALF_PI * np.sum(c * c, axis=-1))
    w = eigenvalues(c.shape[-1]) ** (2.0 * eta)
    return np.sqrt(_HALF_PI * np.sum(w * c * c, axis=-1))


class GeneratorFamily:
    """Parameters of ``A(theta_t w) = Laplacian + a0 + eps * tanh(z(theta_t w))``.

    Parameters
    ----------
    K : int
        Number of sine modes.
    a0, eps : float
        Potential offset and amplitude; ``a0 + |eps| < 1`` is required so the
        family is uniformly exponentially stable with rate ``1 - a0 - |eps|``.
    ou : OUParams
        Drift rate and truncation of the OU driver ``z``.
    noise : NoisePath, optional
        Fibre on which the potential is evaluated; rebind with :meth:`on`.
    """

    def __init__(self, K=64, a0=0.3, eps=0.2, ou=None, noise=None):
        if int(K) != K or K < 1:
            raise ValueError(f"K must be a positive integer, got {K!r}")
        self.K = int(K)
        self.a0 = float(a0)
        self.eps = float(eps)
        self.ou = OUParams() if ou is None else ou
        if not np.isfinite(self.a0) or not np.isfinite(self.eps):
            raise ValueError("a0 and eps must be finite")
        if self.a0 + abs(self.eps) >= 1.0:
            raise ConditionError(
                "(U)",
                f"a0 + |eps| = {self.a0 + abs(self.eps):g} must stay below the first "
                "Dirichlet eigenvalue 1 for uniform exponential stability",
            )
        if noise is not None and noise.K != self.K:
            raise ValueError(f"noise path has {noise.K} modes, generator has {self.K}")
        self.noise = noise

    @property
    def eigenvalues(self) -> np.ndarray:
        return eigenvalues(self.K)

    @property
    def decay_rate(self) -> float:
        """Uniform exponential decay rate ``lambda = 1 - a0 - |eps|``."""
        return 1.0 - self.a0 - abs(self.eps)

    @property
    def bound(self) -> float:
        return self.a0 + abs(self.eps)

    def on(self, noise: NoisePath) -> "GeneratorFamily":
        """Same parameters on another fibre (shares cached potential data)."""
        return GeneratorFamily(self.K, self.a0, self.eps, self.ou, noise)

    def get_params(self):
        return {"K": self.K, "a0": self.a0, "eps": self.eps, "mu": self.ou.mu,
                "truncation_horizon": self.ou.truncation_horizon}

    def _require_noise(self):
        if self.noise is None:
            raise ValueError("generator is not bound to a noise path; use .on(path)")
        return self.noise

    def potential_nodes(self) -> np.ndarray:
        """``a(theta_t w)`` at every data node of the bound path (NaN without history)."""
        path = self._require_noise()
        key = ("potential", self.a0, self.eps, self.ou.mu, self.ou.truncation_horizon)
        cache = path._data.cache
        if key not in cache:
            if self.eps == 0.0:
                a = np.full(path._data.n, self.a0)
            else:
                z = ou_potential_nodes(path, self.ou)
                a = self.a0 + self.eps * np.tanh(z)
            a.setflags(write=False)
            cache[key] = a
        return cache[key]

    def integral_nodes(self) -> np.ndarray:
        """Running composite-trapezoid integral of the potential over data nodes.

        Differences ``I[j] - I[i]`` give ``int_{t_i}^{t_j} a``; nodes without
        OU history are NaN.
        """
        path = self._require_noise()
        key = ("integral", self.a0, self.eps, self.ou.mu, self.ou.truncation_horizon)
        cache = path._data.cache
        if key not in cache:
            a = self.potential_nodes()
            valid = np.flatnonzero(np.isfinite(a))
            I = np.full(a.shape, np.nan)
            if valid.size:
                i0 = valid[0]
                seg = a[i0:]
                I[i0] = 0.0
                I[i0 + 1 :] = np.cumsum(0.5 * (seg[1:] + seg[:-1])) * path.dt
            I.setflags(write=False)
            cache[key] = I
        return cache[key]

    def node(self, t, what="time") -> int:
        path = self._require_noise()
        i = path.node(t, what)
        if not np.isfinite(self.potential_nodes()[i]):
            raise CoverageError(
                f"{what} {t!r} lacks {self.ou.truncation_horizon} units of OU history"
            )
        return i

    def __repr__(self):
        return f"GeneratorFamily(K={self.K}, a0={self.a0}, eps={self.eps}, mu={self.ou.mu})"


def potential(gen: GeneratorFamily, t) -> float:
    """``a(theta_t w) = a0 + eps * tanh(z(theta_t w))`` (linear between nodes)."""
    path = gen._require_noise()
    i, frac = path._position(t)
    a = gen.potential_nodes()
    val = a[i] if frac == 0.0 else (1.0 - frac) * a[i] + frac * a[i + 1]
    if not np.isfinite(val):
        raise CoverageError(f"t={t!r} lacks {gen.ou.truncation_horizon} units of OU history")
    return float(val)


def apply_A(gen: GeneratorFamily, u: SpectralState, t) -> SpectralState:
    """Mode-wise ``(-k**2 + a(t)) * u_k``."""
    c = check_coeffs(_coeffs(u), gen.K, "u")
    return SpectralState((-gen.eigenvalues + potential(gen, t)) * c)


def fractional_power(gen: GeneratorFamily, u: SpectralState, alpha, t=None) -> SpectralState:
    """``(-Laplacian)**alpha u`` for ``alpha`` in ``(-1, 1]``.

    ``t`` is accepted for symmetry with :func:`apply_A` and ignored, since
    norms and powers are taken with respect to the frozen base operator.
    """
    del t
    alpha = check_in_interval(alpha, "alpha", -1.0, 1.0, closed=(False, True))
    c = check_coeffs(_coeffs(u), gen.K, "u")
    if alpha == 0.0:
        return SpectralState(c)
    return SpectralState(gen.eigenvalues**alpha * c)


def evolution_multipliers(gen: GeneratorFamily, t, s) -> np.ndarray:
    """Diagonal of ``U(t, s, w)``: ``exp(-k**2 (t - s) + int_s^t a)``.

    ``t`` and ``s`` must be grid nodes of the bound path with ``s <= t``.
    """
    if s > t:
        raise ValueError(f"evolution system needs s <= t (got s={s!r}, t={t!r})")
    j = gen.node(t, "t")
    i = gen.node(s, "s")
    return _multipliers_between(gen, i, j)


def _multipliers_between(gen, i, j):
    if i == j:
        return np.ones(gen.K)
    I = gen.integral_nodes()
    tau = (j - i) * gen.noise.dt
    return np.exp(-gen.eigenvalues * tau + (I[j] - I[i]))


@dataclass(frozen=True)
class HolderFit:
    """Least-squares fit of ``|a(t) - a(s)| ~ C |t - s|**nu``."""

    nu: float | None
    C: float
    n_pairs: int
    exact_constancy: bool
    max_operator_norm_gap: float = 0.0

    @property
    def status(self) -> str:
        return "exact constancy" if self.exact_constancy else f"nu={self.nu:.3f}"


def check_holder(gen: GeneratorFamily, sample_pairs) -> HolderFit:
    """Estimate the Hoelder exponent of ``t -> A(theta_t w)`` from time pairs.

    Because ``A(t) - A(s)`` is the scalar ``a(t) - a(s)`` times the identity,
    the operator norm is the absolute potential difference.  As a cross-check
    the norm is also recomputed by applying both operators to every basis
    vector and maximising; the largest discrepancy is reported.
    """
    pairs = [(float(s), float(t)) for s, t in sample_pairs]
    if len(pairs) < 8:
        raise ValueError(f"need at least 8 sample pairs, got {len(pairs)}")
    gaps, diffs, worst = [], [], 0.0
    norm_e = np.sqrt(_HALF_PI)
    for s, t in pairs:
        if s == t:
            raise ValueError("sample pairs must have distinct times")
        d = abs(potential(gen, t) - potential(gen, s))
        op = 0.0
        for k in range(1, gen.K + 1):
            e = SpectralState.basis(k, gen.K)
            diff = apply_A(gen, e, t) - apply_A(gen, e, s)
            op = max(op, diff.norm() / norm_e)
        worst = max(worst, abs(op - d))
        gaps.append(abs(t - s))
        diffs.append(d)
    gaps, diffs = np.asarray(gaps), np.asarray(diffs)
    if np.all(diffs == 0.0):
        return HolderFit(None, 0.0, len(pairs), True, worst)
    keep = diffs > 0
    if keep.sum() < 2 or np.ptp(np.log(gaps[keep])) == 0:
        return HolderFit(None, float(diffs.max()), len(pairs), False, worst)
    slope, _ = np.polyfit(np.log(gaps[keep]), np.log(diffs[keep]), 1)
    nu = float(slope)
    C = float(np.max(diffs / gaps**nu)) if nu > 0 else float(diffs.max())
    return HolderFit(nu, C, len(pairs), False, worst)


@dataclass
class EstimateConstants:
    """Constants entering the decay, absorbing and smoothing estimates.

    ``C_tilde`` maps an exponent ``alpha`` to the fitted constant of the
    first decay estimate; use :meth:`C` for lookups.
    """

    lam: float
    C_F: float = 0.0
    Cbar_F: float = 0.0
    sigma: float = 0.0
    beta: float = 0.75
    eta: float = 0.5
    c: float = 1.0
    c_hat: float = 1.0
    C_tilde: dict = field(default_factory=dict)
    holder_exponent: float = 0.5
    delta: float | None = None

    def __post_init__(self):
        for name in ("lam", "c", "c_hat"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("C_F", "Cbar_F", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lam - self.c * self.C_F <= 0:
            raise ConditionError(
                "(Drift)",
                f"lambda - c*C_F = {self.lam - self.c * self.C_F:g} must be positive",
            )
        check_in_interval(self.eta, "eta", 0.0, 1.0)
        check_in_interval(self.beta, "beta", 0.0, 1.0, closed=(False, True))
        if not self.eta < self.beta:
            raise ConditionError("(Noise)", f"eta={self.eta} must be below beta={self.beta}")
        if not 0 < self.holder_exponent <= 1:
            raise ValueError("holder_exponent must lie in (0, 1]")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be > 0")

    @property
    def drift_gap(self) -> float:
        return self.lam - self.c * self.C_F

    def C(self, alpha) -> float:
        for key, val in self.C_tilde.items():
            if abs(float(key) - alpha) < 1e-12:
                return float(val)
        raise KeyError(f"no fitted constant for alpha={alpha}")

    @property
    def alphas(self):
        """Exponents whose constants the absorbing/compactness bounds need."""
        return (self.eta, 1.0 - self.beta, 1.0 - (self.beta - self.eta))

    @classmethod
    def for_generator(cls, gen, **kwargs):
        return cls(lam=gen.decay_rate, **kwargs)


@dataclass(frozen=True)
class DecayEstimateRow:
    estimate: str
    alpha: float
    fitted_constant: float
    sample_count: int
    max_ratio: float
    unbounded: bool = False


def draw_decay_samples(gen, rng, n, alphas, tau_range=(1e-3, 5.0)):
    """Random ``(t, s, x, alpha)`` tuples with grid-node times inside coverage.

    ``tau = t - s`` is log-uniform in ``tau_range``; ``x`` is a Gaussian
    vector with ``k**-2`` decay so it lies in every ``X_alpha``, ``alpha <= 1``.
    """
    path = gen._require_noise()
    a = gen.potential_nodes()
    valid = np.flatnonzero(np.isfinite(a))
    lo, hi = valid[0], valid[-1]
    dt = path.dt
    taus = np.exp(rng.uniform(np.log(tau_range[0]), np.log(tau_range[1]), n))
    steps = np.maximum(1, np.round(taus / dt).astype(int))
    steps = np.minimum(steps, hi - lo)
    out = []
    k = np.arange(1, gen.K + 1, dtype=float)
    for j in range(n):
        i = int(rng.integers(lo, hi - steps[j] + 1))
        s = (i - path.offset) * dt
        t = (i + steps[j] - path.offset) * dt
        x = rng.standard_normal(gen.K) * k**-2.0
        out.append((t, s, x, float(alphas[j % len(alphas)])))
    return out


def _ratios(gen, lam, i, j, x, alpha, eta):
    """Sample ratio and operator-norm ratio for the three decay estimates."""
    mu = gen.eigenvalues
    m = _multipliers_between(gen, i, j)
    tau = (j - i) * gen.noise.dt
    growth = np.exp(lam * tau)
    xn = state_norm(x)
    w1 = mu**alpha * m
    r1 = tau**alpha * growth * state_norm(w1 * x) / xn
    op1 = tau**alpha * growth * np.max(w1)
    w3 = mu ** (eta - alpha) * m
    r3 = tau ** (eta - alpha) * growth * state_norm(w3 * x) / xn
    op3 = tau ** (eta - alpha) * growth * np.max(w3)
    return r1, op1, r3, op3


def verify_decay_estimates(gen, constants, samples, refinements=8):
    """Fit the constants of the three smoothing/decay estimates.

    For every sample ``(t, s, x, alpha)`` the ratio
    ``(t-s)**alpha * exp(lam (t-s)) * ||(-A)^alpha U(t,s) x|| / ||x||`` is formed
    for the first estimate; the second coincides with it because the frozen
    powers commute with ``U``; the third uses ``(-A)^-alpha U (-A)^eta`` with
    the exponent ``eta - alpha``.  The fitted constant is the largest
    operator-norm ratio (mode-wise maximum) seen, which dominates every sample
    ratio.  A doubling test halves ``t - s`` ``refinements`` times at the
    shortest sample and flags estimates whose ratio keeps growing.

    Returns a list of :class:`DecayEstimateRow`.
    """
    lam = constants.lam
    eta = constants.eta
    acc = {}
    shortest = {}
    for t, s, x, alpha in samples:
        if not t > s:
            raise ValueError("decay samples need t > s")
        i, j = gen.node(s, "s"), gen.node(t, "t")
        x = check_coeffs(_coeffs(x), gen.K, "x")
        r1, op1, r3, op3 = _ratios(gen, lam, i, j, x, alpha, eta)
        for est, r, op in (("E1", r1, op1), ("E2", r1, op1), ("E3", r3, op3)):
            if est == "E3" and alpha > eta:
                continue
            key = (est, float(alpha))
            n, mx, fit = acc.get(key, (0, 0.0, 0.0))
            acc[key] = (n + 1, max(mx, r), max(fit, op))
        if alpha not in shortest or (j - i) < shortest[alpha][1] - shortest[alpha][0]:
            shortest[alpha] = (i, j)
    rows = []
    for (est, alpha), (n, mx, fit) in sorted(acc.items()):
        i, j = shortest[alpha]
        seq = []
        steps = j - i
        for _ in range(refinements + 1):
            if steps < 1:
                break
            _, op1, _, op3 = _ratios(gen, lam, j - steps, j, np.ones(gen.K), alpha, eta)
            seq.append(op3 if est == "E3" else op1)
            steps //= 2
        unbounded = _keeps_growing(seq)
        rows.append(DecayEstimateRow(est, alpha, float(fit), n, float(mx), unbounded))
    return rows


def _keeps_growing(seq):
    if len(seq) < 4:
        return False
    tail = seq[-4:]
    increasing = all(b > a * 1.01 for a, b in zip(tail, tail[1:]))
    return bool(increasing and tail[-1] > 1.5 * seq[0])


def fitted_table(rows, estimate="E1"):
    """``{alpha: fitted constant}`` for one estimate id."""
    return {r.alpha: r.fitted_constant for r in rows if r.estimate == estimate}


def write_decay_csv(rows, file):
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimate", "alpha", "fitted_constant", "sample_count", "max_ratio"])
        for r in rows:
            w.writerow([r.estimate, f"{r.alpha:.17g}", f"{r.fitted_constant:.17g}",
                        r.sample_count, f"{r.max_ratio:.17g}"])


def calibrate_constants(gen, constants, n_samples=256, seed=0, tau_range=(1e-3, 5.0)):
    """Copy of ``constants`` with ``C_tilde`` fitted for ``alpha`` in ``{0} U constants.alphas``.

    ``gen`` is a generator bound to a fibre, or a sequence of them; with
    several fibres each contributes ``n_samples`` draws and the constant is
    the largest fit.  Samples come from :func:`draw_decay_samples` with a
    fixed seed, so the fit is reproducible.
    """
    gens = list(gen) if isinstance(gen, (list, tuple)) else [gen]
    alphas = sorted({0.0, *[float(a) for a in constants.alphas]})
    table = dict(constants.C_tilde)
    fits = {}
    for n, g in enumerate(gens):
        rng = np.random.default_rng([seed, n])
        samples = draw_decay_samples(g, rng, n_samples, alphas, tau_range)
        for a, v in fitted_table(verify_decay_estimates(g, constants, samples), "E1").items():
            fits[a] = max(fits.get(a, 0.0), v)
    table.update(fits)
    return replace(constants, C_tilde=table)


def decay_envelope(K, alpha, tau_max, tau_min=0.0):
    """Fibre-free bound on the operator-norm ratio of the first decay estimate.

    Because ``a <= a0 + |eps|`` and ``lambda = 1 - a0 - |eps|``,
    ``tau**alpha exp(lambda tau) ||(-Lap)^alpha U(t, s)||`` is at most
    ``max_k (k**2 tau)**alpha exp(-(k**2 - 1) tau)`` with ``tau = t - s``.
    The maximum over ``tau`` in ``[tau_min, tau_max]`` is returned exactly.
    The mode ``k = 1`` grows like ``tau**alpha``, so there is no uniform
    bound in ``tau`` for ``alpha > 0``.
    """
    mu = eigenvalues(K)
    if alpha == 0.0:
        return 1.0
    cand = [tau_max, max(tau_min, 1e-300)]
    cand += list(np.clip(alpha / (mu[1:] - 1.0), tau_min, tau_max))
    tau = np.asarray(cand)[:, None]
    return float(np.max((mu * tau) ** alpha * np.exp(-(mu - 1.0) * tau)))
