"""Two-sided Wiener paths in spectral coordinates and the derived OU potential.

A :class:`NoisePath` stores piecewise-linear sample paths of an
``X_beta``-valued Wiener process, expanded in the Dirichlet sine basis of
``(0, pi)``, together with an independent scalar Brownian path that drives
the Ornstein-Uhlenbeck potential of the generator.

Paths are immutable.  The Wiener shift only moves the time origin inside the
shared increment data, so ``shift(shift(w, s), t)`` and ``shift(w, s + t)``
are the same object up to identity and evaluate bit-identically.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy import signal, special

from ._validation import CoverageError, check_positive, snap_index

__all__ = [
    "NoiseGrid",
    "NoisePath",
    "OUParams",
    "TemperedReport",
    "sample_path",
    "shift",
    "evaluate",
    "ou_potential",
    "check_tempered",
    "coarsen",
    "xbeta_norm",
    "save_path",
    "load_path",
]

_GRID_TOL = 1e-9


def _as_steps(value, dt, name):
    steps = value / dt
    n = int(round(steps))
    if abs(steps - n) > _GRID_TOL * max(1.0, abs(steps)):
        raise ValueError(f"dt={dt!r} does not divide {name}={value!r}")
    return n


@dataclass(frozen=True)
class NoiseGrid:
    """Uniform two-sided time grid that contains ``t = 0`` as a node."""

    t_min: float
    t_max: float
    dt: float

    def __post_init__(self):
        check_positive(self.dt, "dt")
        if self.t_min > 0 or self.t_max < 0:
            raise ValueError(
                f"grid must contain 0: got t_min={self.t_min!r}, t_max={self.t_max!r}"
            )
        if self.t_max - self.t_min <= 0:
            raise ValueError("grid must have positive length")
        _as_steps(-self.t_min, self.dt, "|t_min|")
        _as_steps(self.t_max, self.dt, "t_max")

    @property
    def n_before(self) -> int:
        return _as_steps(-self.t_min, self.dt, "|t_min|")

    @property
    def n_after(self) -> int:
        return _as_steps(self.t_max, self.dt, "t_max")

    @property
    def n_points(self) -> int:
        return self.n_before + self.n_after + 1

    def times(self) -> np.ndarray:
        return np.arange(-self.n_before, self.n_after + 1) * self.dt


@dataclass(frozen=True)
class OUParams:
    """Drift rate and kept history length of the stationary OU integral."""

    mu: float = 1.0
    truncation_horizon: float = 10.0

    def __post_init__(self):
        check_positive(self.mu, "mu")
        check_positive(self.truncation_horizon, "truncation_horizon")
        if self.truncation_horizon * self.mu < 10.0 - 1e-12:
            raise ValueError(
                "truncation_horizon must be >= 10/mu so that the neglected tail "
                f"mass exp(-mu*T) stays below 5e-5 (got mu*T={self.mu * self.truncation_horizon:g})"
            )

    @property
    def tail_bound(self) -> float:
        return float(np.exp(-self.mu * self.truncation_horizon))


class _PathData:
    """Shared storage behind a family of shifted paths.

    ``cum[i]`` is the sum of the first ``i`` increments, so the value of a path
    with origin node ``o`` at node ``i`` is ``cum[i] - cum[o]``.
    """

    def __init__(self, dt, increments, scalar_increments, cum=None, scalar_cum=None):
        self.dt = float(dt)
        self.increments = increments
        self.scalar_increments = scalar_increments
        K = increments.shape[1]
        # given node values are kept verbatim so subsampling and reloading are exact
        if cum is None:
            cum = np.vstack([np.zeros((1, K)), np.cumsum(increments, axis=0)])
        if scalar_cum is None:
            scalar_cum = np.concatenate([[0.0], np.cumsum(scalar_increments)])
        self.cum = np.array(cum, dtype=float)
        self.scalar_cum = np.array(scalar_cum, dtype=float)
        self.n = self.cum.shape[0]
        self.cache = {}
        for arr in (self.increments, self.scalar_increments, self.cum, self.scalar_cum):
            arr.setflags(write=False)

    def ou_nodes(self, mu, window):
        """OU integral at every node; NaN where fewer than ``window`` increments precede."""
        key = ("ou", float(mu), int(window))
        if key not in self.cache:
            kernel = np.exp(-mu * self.dt * np.arange(0, window + 1))
            kernel[0] = 0.0
            conv = signal.fftconvolve(self.scalar_increments, kernel)
            z = np.full(self.n, np.nan)
            # conv[i] = sum_m kernel[m] * inc[i - m]; node i uses increments i-1 .. i-window
            z[window:] = conv[window : self.n]
            z.setflags(write=False)
            self.cache[key] = z
        return self.cache[key]


class NoisePath:
    """Piecewise-linear two-sided Wiener path, zero at its own time origin.

    Construct with :func:`sample_path`; derive re-centred copies with
    :func:`shift`.  Values between grid nodes are linear interpolants and any
    query outside ``[grid.t_min, grid.t_max]`` raises :class:`CoverageError`.
    """

    __slots__ = ("_data", "_origin", "seed", "beta", "gamma", "scale", "modal_scales")

    def __init__(self, data, origin, seed, beta, gamma, scale, modal_scales):
        self._data = data
        self._origin = int(origin)
        self.seed = seed
        self.beta = float(beta)
        self.gamma = float(gamma)
        self.scale = float(scale)
        self.modal_scales = modal_scales

    @property
    def K(self) -> int:
        return self._data.cum.shape[1]

    @property
    def dt(self) -> float:
        return self._data.dt

    @property
    def grid(self) -> NoiseGrid:
        dt = self._data.dt
        return NoiseGrid(-self._origin * dt, (self._data.n - 1 - self._origin) * dt, dt)

    @property
    def offset(self) -> int:
        """Node index of this path's time origin inside the shared data."""
        return self._origin

    @property
    def modal_increments(self) -> np.ndarray:
        return self._data.increments

    @property
    def modal_values(self) -> np.ndarray:
        return self._data.cum - self._data.cum[self._origin]

    @property
    def scalar_path(self) -> np.ndarray:
        return self._data.scalar_cum - self._data.scalar_cum[self._origin]

    @property
    def eigenvalues(self) -> np.ndarray:
        k = np.arange(1, self.K + 1, dtype=float)
        return k * k

    def times(self) -> np.ndarray:
        return (np.arange(self._data.n) - self._origin) * self._data.dt

    def node(self, t, what="time") -> int:
        """Data index of the node at path time ``t``; raises if ``t`` is off-grid."""
        return snap_index(t, -self._origin * self._data.dt, self._data.dt, self._data.n, what)

    def _position(self, t):
        pos = t / self._data.dt + self._origin
        if pos < -_GRID_TOL or pos > self._data.n - 1 + _GRID_TOL:
            raise CoverageError(
                f"t={t!r} outside stored range [{self.grid.t_min}, {self.grid.t_max}]"
            )
        i = int(round(pos))
        if abs(pos - i) <= _GRID_TOL * max(1.0, abs(pos)):
            return i, 0.0
        i = int(np.floor(pos))
        return i, pos - i

    def value(self, t) -> np.ndarray:
        i, frac = self._position(t)
        cum = self._data.cum
        base = cum[self._origin]
        if frac == 0.0:
            return cum[i] - base
        return (1.0 - frac) * (cum[i] - base) + frac * (cum[i + 1] - base)

    def scalar_value(self, t) -> float:
        i, frac = self._position(t)
        c = self._data.scalar_cum
        base = c[self._origin]
        if frac == 0.0:
            return float(c[i] - base)
        return float((1.0 - frac) * (c[i] - base) + frac * (c[i + 1] - base))

    def values_at_nodes(self, i0, i1, step=1) -> np.ndarray:
        """Modal values at data nodes ``i0, i0+step, ..., i1`` (inclusive)."""
        if i0 < 0 or i1 >= self._data.n:
            raise CoverageError("requested node window outside stored data")
        return self._data.cum[i0 : i1 + 1 : step] - self._data.cum[self._origin]

    def __eq__(self, other):
        if not isinstance(other, NoisePath):
            return NotImplemented
        # same grid and same origin-relative node values
        return (
            self._origin == other._origin
            and self.dt == other.dt
            and self.seed == other.seed
            and self.beta == other.beta
            and self.gamma == other.gamma
            and self.scale == other.scale
            and np.array_equal(self.modal_values, other.modal_values)
            and np.array_equal(self.scalar_path, other.scalar_path)
        )

    def __hash__(self):
        return hash((self.seed, self._origin, self._data.n, self.K))

    def __repr__(self):
        g = self.grid
        return (
            f"NoisePath(seed={self.seed}, K={self.K}, beta={self.beta}, gamma={self.gamma}, "
            f"grid=[{g.t_min}, {g.t_max}] dt={g.dt})"
        )


def modal_scales(K, beta, gamma, scale=1.0) -> np.ndarray:
    """Per-mode amplitudes ``q_k = scale * mu_k**(-beta - gamma/2)`` with ``mu_k = k**2``."""
    mu = np.arange(1, K + 1, dtype=float) ** 2
    return scale * mu ** (-beta - gamma / 2.0)


def sample_path(seed, grid, modes, decay=(0.5, 1.0), scale=1.0) -> NoisePath:
    """Draw a two-sided path with ``modes`` sine modes on ``grid``.

    Increments of mode ``k`` are i.i.d. ``N(0, dt * q_k**2)``; the scalar path
    uses an independent standard Brownian motion.  Identical arguments give
    bit-identical paths.

    Parameters
    ----------
    seed : int
        Seed for :func:`numpy.random.default_rng`.
    grid : NoiseGrid
        Must satisfy ``t_min < 0 < t_max``.
    modes : int
        Truncation ``K >= 1``.
    decay : tuple (beta, gamma)
        Regularity exponent ``beta`` in ``(0, 1]`` and extra decay ``gamma > 1/2``.
    scale : float
        Normalisation of the amplitude law.
    """
    beta, gamma = (float(v) for v in decay)
    if not isinstance(grid, NoiseGrid):
        raise TypeError("grid must be a NoiseGrid")
    if not (grid.t_min < 0 < grid.t_max):
        raise ValueError("sample_path needs a strictly two-sided grid (t_min < 0 < t_max)")
    if int(modes) != modes or modes < 1:
        raise ValueError(f"modes must be a positive integer, got {modes!r}")
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta!r}")
    if gamma <= 0.5:
        raise ValueError(f"gamma must exceed 1/2 for an X_beta-valued path, got {gamma!r}")
    check_positive(scale, "scale")
    modes = int(modes)
    q = modal_scales(modes, beta, gamma, scale)
    n_inc = grid.n_points - 1
    rng = np.random.default_rng(seed)
    sq = np.sqrt(grid.dt)
    increments = rng.standard_normal((n_inc, modes)) * (sq * q)
    scalar_increments = rng.standard_normal(n_inc) * sq
    data = _PathData(grid.dt, increments, scalar_increments)
    q.setflags(write=False)
    return NoisePath(data, grid.n_before, seed, beta, gamma, scale, q)


def shift(path: NoisePath, s) -> NoisePath:
    """Wiener shift ``theta_s w(.) = w(s + .) - w(s)``.

    ``s`` must be a grid node of ``path``; the shifted path covers
    ``[t_min - s, t_max - s]``.
    """
    i = path.node(s, "shift")
    return NoisePath(path._data, i, path.seed, path.beta, path.gamma, path.scale, path.modal_scales)


def coarsen(path: NoisePath, factor: int) -> NoisePath:
    """Subsample the path onto every ``factor``-th node (values at kept nodes unchanged)."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return path
    if path._origin % factor or (path._data.n - 1 - path._origin) % factor:
        raise ValueError("factor must divide both sides of the grid")
    start = path._origin % factor
    cum = path._data.cum[start::factor]
    scum = path._data.scalar_cum[start::factor]
    data = _PathData(path.dt * factor, np.diff(cum, axis=0), np.diff(scum), cum, scum)
    return NoisePath(
        data, (path._origin - start) // factor, path.seed, path.beta, path.gamma,
        path.scale, path.modal_scales,
    )


def xbeta_norm(path: NoisePath, values, beta=None) -> np.ndarray:
    """``X_beta`` norm(s) of modal value vector(s) (last axis = modes)."""
    beta = path.beta if beta is None else beta
    w = path.eigenvalues ** (2.0 * beta)
    v = np.asarray(values)
    return np.sqrt(0.5 * np.pi * np.sum(w * v * v, axis=-1))


def evaluate(path: NoisePath, t, space="X"):
    """Path value at time ``t``.

    ``space="X"`` returns the modal coefficients as a
    :class:`~pathmild.operator.SpectralState`; ``space="X_beta"`` returns the
    same coefficients weighted by ``mu_k**beta`` so that the plain X-norm of
    the result is the ``X_beta`` norm of the path value; ``space="scalar"``
    returns the scalar driving path.
    """
    from .operator import SpectralState

    if space == "X":
        return SpectralState(path.value(t))
    if space in ("X_beta", "Xbeta"):
        return SpectralState(path.value(t) * path.eigenvalues**path.beta)
    if space == "scalar":
        return path.scalar_value(t)
    raise ValueError(f"unknown space {space!r}; expected 'X', 'X_beta' or 'scalar'")


def _ou_window(params: OUParams, dt):
    return int(np.ceil(params.truncation_horizon / dt - _GRID_TOL))


def _ou_at_node(path, params, i):
    window = _ou_window(params, path.dt)
    if i - window < 0:
        raise CoverageError(
            f"OU potential needs {params.truncation_horizon} time units of history; "
            f"only {i * path.dt:g} stored before t={(i - path.offset) * path.dt:g}"
        )
    inc = path._data.scalar_increments[i - window : i][::-1]
    weights = np.exp(-params.mu * path.dt * np.arange(1, window + 1))
    return float(np.dot(weights, inc))


def ou_potential(path: NoisePath, params: OUParams, t) -> float:
    """Truncated stationary OU integral ``int_{t-T}^t exp(-mu (t-s)) dwbar(s)``.

    Left-point Riemann-Stieltjes sum over the scalar increments.  Off-node
    times interpolate linearly between the two neighbouring node values.
    """
    i, frac = path._position(t)
    if frac == 0.0:
        return _ou_at_node(path, params, i)
    return (1.0 - frac) * _ou_at_node(path, params, i) + frac * _ou_at_node(path, params, i + 1)


def ou_potential_nodes(path: NoisePath, params: OUParams) -> np.ndarray:
    """OU integral at every stored node of ``path`` (NaN where history is short).

    Indexed by data node; shifted paths share the same array.
    """
    return path._data.ou_nodes(params.mu, _ou_window(params, path.dt))


@dataclass(frozen=True)
class TemperedReport:
    """Growth diagnostics of ``exp(-eps |t|) ||w(t)||_{X_beta}`` over the grid."""

    eps: tuple
    maxima: tuple
    argmax_times: tuple
    nondecay: tuple

    @property
    def any_nondecay(self) -> bool:
        return any(self.nondecay)


def check_tempered(path: NoisePath, beta=None, eps=(0.01, 0.1, 1.0)) -> TemperedReport:
    """Scan the weighted path norm for each decay rate in ``eps``.

    A rate is flagged as non-decaying when its maximum sits at the outermost
    stored node, i.e. the weighted norm is still growing where data ends.
    """
    t = path.times()
    norms = xbeta_norm(path, path.modal_values, beta)
    maxima, where, flags = [], [], []
    for e in eps:
        weighted = np.exp(-e * np.abs(t)) * norms
        j = int(np.argmax(weighted))
        maxima.append(float(weighted[j]))
        where.append(float(t[j]))
        flags.append(bool(weighted[j] > 0 and j in (0, len(t) - 1)))
    return TemperedReport(tuple(float(e) for e in eps), tuple(maxima), tuple(where), tuple(flags))


def xbeta_tail_bound(K, beta, gamma, scale=1.0) -> float:
    """Bound on ``E||w(1)||_{X_beta}^2`` for any truncation: ``(pi/2) scale^2 zeta(2 gamma)``."""
    del K, beta
    return 0.5 * np.pi * scale**2 * float(special.zeta(2.0 * gamma, 1))


def xbeta_variance_rate(K, beta, gamma, scale=1.0) -> float:
    """``E||w(1)||_{X_beta}^2`` at truncation ``K``."""
    k = np.arange(1, K + 1, dtype=float)
    return 0.5 * np.pi * scale**2 * float(np.sum(k ** (-2.0 * gamma)))


# -- serialisation ---------------------------------------------------------

_MAGIC = b"PMNOISE1"


def _header(path):
    g = path.grid
    return {
        "seed": path.seed,
        "t_min": g.t_min,
        "t_max": g.t_max,
        "dt": g.dt,
        "K": path.K,
        "beta": path.beta,
        "gamma": path.gamma,
        "scale": path.scale,
    }


def save_path(path: NoisePath, file, fmt="binary"):
    """Write node values of every mode plus the scalar path.

    ``fmt="binary"``: ``b"PMNOISE1"``, a little-endian uint32 header length,
    a UTF-8 JSON header, then float64 little-endian rows
    ``(t, w_1, ..., w_K, wbar)``.  ``fmt="csv"``: ``#``-prefixed JSON header
    line, a column header, and one row per node with 17 significant digits.
    """
    header = _header(path)
    body = np.column_stack([path.times(), path.modal_values, path.scalar_path])
    if fmt == "binary":
        hb = json.dumps(header, sort_keys=True).encode()
        with open(file, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(hb)))
            fh.write(hb)
            fh.write(body.astype("<f8").tobytes())
    elif fmt == "csv":
        cols = ["t"] + [f"w_{k}" for k in range(1, path.K + 1)] + ["wbar"]
        buf = io.StringIO()
        buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
        buf.write(",".join(cols) + "\n")
        np.savetxt(buf, body, fmt="%.17g", delimiter=",")
        with open(file, "w", newline="\n") as fh:
            fh.write(buf.getvalue())
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_path(file) -> NoisePath:
    """Inverse of :func:`save_path` (format detected from the file contents)."""
    with open(file, "rb") as fh:
        head = fh.read(len(_MAGIC))
        if head == _MAGIC:
            (n,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(n).decode())
            body = np.frombuffer(fh.read(), dtype="<f8")
            body = body.reshape(-1, header["K"] + 2)
        else:
            fh.seek(0)
            first = fh.readline().decode()
            if not first.startswith("# "):
                raise ValueError("not a noise-path file")
            header = json.loads(first[2:])
            body = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
    grid = NoiseGrid(header["t_min"], header["t_max"], header["dt"])
    values = np.array(body[:, 1 : 1 + header["K"]])
    scalar = np.array(body[:, -1])
    # origin rows are stored as exact zeros, so keeping the raw values
    # reproduces every node value bit-for-bit
    data = _PathData(grid.dt, np.diff(values, axis=0), np.diff(scalar), values, scalar)
    q = modal_scales(header["K"], header["beta"], header["gamma"], header["scale"])
    return NoisePath(data, grid.n_before, header["seed"], header["beta"], header["gamma"], header["scale"], q)
