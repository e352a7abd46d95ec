"""Input validation helpers shared by the numerical modules and estimators."""
import numbers

import numpy as np


class CoverageError(ValueError):
    """A query needs noise-path data outside the stored time range."""


class ConditionError(ValueError):
    """A configuration violates one of the structural conditions.

    ``condition`` carries the short name of the violated hypothesis, e.g.
    ``"(U)"``, ``"(Drift)"`` or ``"(Noise)"``.
    """

    def __init__(self, condition, message):
        self.condition = condition
        super().__init__(f"{condition} violated: {message}")


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_in_interval(value, name, low, high, closed=(False, False)):
    value = float(value)
    lo_ok = value >= low if closed[0] else value > low
    hi_ok = value <= high if closed[1] else value < high
    if not (lo_ok and hi_ok):
        lb = "[" if closed[0] else "("
        rb = "]" if closed[1] else ")"
        raise ValueError(f"{name} must lie in {lb}{low}, {high}{rb}, got {value!r}")
    return value


def check_coeffs(coeffs, K=None, name="coeffs"):
    """Return a finite float array of spectral coefficients (last axis = modes)."""
    arr = np.asarray(coeffs, dtype=float)
    if arr.ndim == 0:
        raise ValueError(f"{name} must be at least 1-D")
    if K is not None and arr.shape[-1] != K:
        raise ValueError(f"{name} has {arr.shape[-1]} modes, expected {K}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def snap_index(t, t0, dt, n, what="time"):
    """Index of the grid node ``t0 + i*dt`` equal to ``t`` (within 1e-9 dt).

    Raises ``ValueError`` when ``t`` is not a node and ``CoverageError`` when
    the node lies outside ``[0, n)``.
    """
    pos = (t - t0) / dt
    idx = int(round(pos))
    if abs(pos - idx) > 1e-9 * max(1.0, abs(pos)) + 1e-9:
        raise ValueError(f"{what} {t!r} is not a grid node (dt={dt!r})")
    if idx < 0 or idx >= n:
        raise CoverageError(f"{what} {t!r} lies outside the stored range")
    return idx
