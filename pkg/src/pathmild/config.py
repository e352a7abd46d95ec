"""Run configuration: flat dotted keys, validation and object builders.

A configuration is a flat mapping such as ``{"drift.sigma": 0.1}``.  Values
are resolved in the order defaults < config file < environment < ``--set``
overrides.  Environment overrides use the prefix ``PATHMILD_`` with ``__``
in place of dots, e.g. ``PATHMILD_DRIFT__SIGMA=0``.

Unknown keys are rejected.  Structural conditions are checked at load time
and reported with the condition name: ``(U)`` for ``a0 + |eps| < 1``,
``(Drift)`` for ``lambda - c C_F > 0`` and ``(Noise)`` for the noise
regularity requirements.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os

import numpy as np

from ._validation import ConditionError
from .noise import NoiseGrid, OUParams, sample_path
from .operator import EstimateConstants, GeneratorFamily, calibrate_constants
from .solver import Nonlinearity, SolverParams

__all__ = ["RunConfig", "ConfigError", "DEFAULTS", "ENV_PREFIX", "load_config"]

ENV_PREFIX = "PATHMILD_"
_CALIBRATED = {}

DEFAULTS = {
    "instance.K": 64,
    "instance.length": math.pi,
    "instance.a0": 0.3,
    "instance.eps": 0.2,
    "instance.mu": 1.0,
    "instance.ou_horizon": 10.0,
    "noise.t_min": -80.0,
    "noise.t_max": 20.0,
    "noise.dt": 1e-3,
    "noise.beta": 0.75,
    "noise.gamma": 1.0,
    "noise.scale": 1.0,
    "noise.seeds": [1, 2, 3],
    "drift.kind": "scaled_tanh",
    "drift.C_F": 0.25,
    "drift.Cbar_F": 0.5,
    "drift.rho": 0.0,
    "drift.a": 1.0,
    "drift.R": 0.1,
    "drift.sigma": 0.1,
    "constants.c": 1.0,
    "constants.c_hat": 1.0,
    "constants.calibration_samples": 256,
    "solver.dt": 1e-3,
    "solver.picard_tol": 1e-10,
    "solver.picard_max_iter": 50,
    "solver.quadrature": "trapezoid",
    "solver.singular_quadrature_refinement": 6,
    "simulate.horizon": 1.0,
    "simulate.u0": "smooth",
    "simulate.store_every": 10,
    "attractor.T": [5.0, 10.0, 20.0],
    "attractor.solver_dt": 1e-2,
    "attractor.ensemble_law": "log_radius",
    "attractor.ensemble_count": 128,
    "attractor.ensemble_radius": 1000.0,
    "attractor.ensemble_seed": 0,
    "attractor.delta_rule": 0.05,
    "attractor.eta": 0.5,
    "attractor.nu_grid": [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45],
    "attractor.t_tilde": 1.0,
    "attractor.eps_range": [0.02, 0.5],
    "attractor.eps_count": 10,
    "attractor.rate_s": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
    "verify.pairs": 32,
    "verify.fibers": 4,
    "verify.initial_conditions": 8,
    "output.dir": "out",
    "output.formats": ["csv"],
}

_CHOICES = {
    "drift.kind": ("zero", "linear", "scaled_tanh", "fisher_kpp_clipped"),
    "solver.quadrature": ("left", "trapezoid"),
    "simulate.u0": ("smooth", "zero", "fisher_kpp", "random"),
    "attractor.ensemble_law": ("sphere", "ball", "log_radius", "zero"),
}

_FISHER_KPP = {"drift.kind": "fisher_kpp_clipped", "drift.a": 1.0, "drift.R": 0.1}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _scalar(text):
    """JSON scalar, or the bare word itself."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip("\"'")


def _coerce(key, value):
    """Convert ``value`` (possibly a string) to the type of the default."""
    default = DEFAULTS[key]
    if isinstance(value, str) and not isinstance(default, str):
        text = value.strip()
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            if isinstance(default, list):
                items = [x.strip() for x in text.strip("[]").split(",") if x.strip()]
                value = [_scalar(x) for x in items]
            else:
                raise ConfigError(f"cannot parse {value!r}", key) from None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("expected a boolean", key)
    elif isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"expected an integer, got {value!r}", key)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        value = float(value)
    elif isinstance(default, list):
        if not isinstance(value, list):
            value = [value]
        if not value:
            raise ConfigError("list must be non-empty", key)
        kind = str if isinstance(default[0], str) else (int, float)
        if any(isinstance(x, bool) or not isinstance(x, kind) for x in value):
            raise ConfigError(f"list entries must all be like {default[0]!r}", key)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", key)
    return value


class RunConfig:
    """Validated flat configuration with builders for the numerical objects."""

    def __init__(self, values=None, explicit=()):
        merged = dict(DEFAULTS)
        values = {} if values is None else _flatten(values)
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
        for k, v in values.items():
            merged[k] = _coerce(k, v)
        explicit = set(explicit) | set(values)
        if merged["simulate.u0"] == "fisher_kpp" and "drift.kind" not in explicit:
            for k, v in _FISHER_KPP.items():
                if k not in explicit:
                    merged[k] = v
        self._values = merged
        self._validate()

    # -- access ----------------------------------------------------------
    def __getitem__(self, key):
        return self._values[key]

    def as_dict(self):
        return copy.deepcopy(self._values)

    def with_overrides(self, **overrides):
        """New config with dotted-key overrides (use ``__`` for dots in kwargs)."""
        vals = {k: v for k, v in self._values.items() if v != DEFAULTS[k]}
        vals.update({k.replace("__", "."): v for k, v in overrides.items()})
        return RunConfig(vals)

    def updated(self, mapping):
        vals = dict(self._values)
        vals.update(mapping)
        return RunConfig(vals, explicit=set(mapping))

    @property
    def hash(self) -> str:
        blob = json.dumps(self._values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- validation --------------------------------------------------------
    def _validate(self):
        v = self._values
        for key, choices in _CHOICES.items():
            if v[key] not in choices:
                raise ConfigError(f"must be one of {choices}, got {v[key]!r}", key)
        if abs(v["instance.length"] - math.pi) > 1e-12:
            raise ConfigError("only the interval (0, pi) is supported", "instance.length")
        if v["instance.K"] < 1:
            raise ConfigError("must be >= 1", "instance.K")
        a0, eps = v["instance.a0"], v["instance.eps"]
        if a0 + abs(eps) >= 1.0:
            raise ConditionError("(U)", f"instance.a0 + |instance.eps| = {a0 + abs(eps):g} must be < 1")
        lam = 1.0 - a0 - abs(eps)
        F = self.nonlinearity()
        c = v["constants.c"]
        if lam - c * F.lipschitz <= 0:
            raise ConditionError(
                "(Drift)", f"lambda - c*C_F = {lam - c * F.lipschitz:g} must be positive "
                f"(lambda={lam:g}, C_F={F.lipschitz:g})")
        beta, gamma = v["noise.beta"], v["noise.gamma"]
        if not 0 < beta <= 1:
            raise ConditionError("(Noise)", f"noise.beta={beta} must lie in (0, 1]")
        if gamma <= 0.5:
            raise ConditionError("(Noise)", f"noise.gamma={gamma} must exceed 1/2")
        if not 0 < v["attractor.eta"] < beta:
            raise ConditionError("(Noise)", f"attractor.eta={v['attractor.eta']} must lie in (0, beta={beta})")
        if v["drift.sigma"] < 0:
            raise ConfigError("must be >= 0", "drift.sigma")
        try:
            grid = self.grid()
        except ValueError as exc:
            raise ConfigError(str(exc), "noise.dt") from None
        if not grid.t_min < 0 < grid.t_max:
            raise ConfigError("grid must satisfy t_min < 0 < t_max", "noise.t_min")
        for key in ("solver.dt", "attractor.solver_dt"):
            ratio = v[key] / v["noise.dt"]
            if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise ConfigError(f"must be an integer multiple of noise.dt={v['noise.dt']}", key)
        try:
            self.solver_params()
            OUParams(v["instance.mu"], v["instance.ou_horizon"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if v["attractor.delta_rule"] <= 0:
            raise ConfigError("must be > 0", "attractor.delta_rule")
        nus = v["attractor.nu_grid"]
        if any(not 0 < nu < 0.5 for nu in nus):
            raise ConfigError("every nu must lie in (0, 1/2)", "attractor.nu_grid")
        er = v["attractor.eps_range"]
        if len(er) != 2 or not 0 < er[0] < er[1] or er[1] / er[0] < 10 - 1e-9:
            raise ConfigError("needs [low, high] spanning at least one decade", "attractor.eps_range")
        if any(T <= 0 for T in v["attractor.T"]):
            raise ConfigError("pullback times must be positive", "attractor.T")
        if max(v["attractor.T"]) + v["instance.ou_horizon"] > -grid.t_min + 1e-9:
            raise ConfigError("noise.t_min too shallow for the largest pullback time plus OU history",
                              "noise.t_min")
        if v["simulate.horizon"] > grid.t_max + 1e-9:
            raise ConfigError("horizon exceeds noise.t_max", "simulate.horizon")
        for key in ("verify.pairs", "verify.fibers", "verify.initial_conditions",
                    "attractor.ensemble_count", "attractor.eps_count", "simulate.store_every"):
            if v[key] < 1:
                raise ConfigError("must be >= 1", key)
        if v["attractor.eps_count"] < 3:
            raise ConfigError("need at least 3 box sizes", "attractor.eps_count")
        formats = set(v["output.formats"])
        if not formats <= {"csv", "binary"}:
            raise ConfigError("formats must be drawn from csv, binary", "output.formats")

    # -- builders ------------------------------------------------------------
    @property
    def seeds(self):
        return [int(s) for s in self._values["noise.seeds"]]

    @property
    def sigma(self) -> float:
        return float(self._values["drift.sigma"])

    def grid(self) -> NoiseGrid:
        v = self._values
        return NoiseGrid(v["noise.t_min"], v["noise.t_max"], v["noise.dt"])

    def path(self, seed):
        v = self._values
        return sample_path(seed, self.grid(), v["instance.K"], (v["noise.beta"], v["noise.gamma"]),
                           v["noise.scale"])

    def generator(self) -> GeneratorFamily:
        v = self._values
        return GeneratorFamily(v["instance.K"], v["instance.a0"], v["instance.eps"],
                               OUParams(v["instance.mu"], v["instance.ou_horizon"]))

    def nonlinearity(self) -> Nonlinearity:
        v = self._values
        kind = v["drift.kind"]
        if kind == "zero":
            return Nonlinearity.zero()
        if kind == "linear":
            return Nonlinearity.linear(v["drift.rho"])
        if kind == "scaled_tanh":
            return Nonlinearity.scaled_tanh(v["drift.C_F"], v["drift.Cbar_F"])
        return Nonlinearity.fisher_kpp_clipped(v["drift.a"], v["drift.R"])

    def solver_params(self, dt=None) -> SolverParams:
        v = self._values
        return SolverParams(
            dt=v["solver.dt"] if dt is None else dt,
            picard_tol=v["solver.picard_tol"],
            picard_max_iter=v["solver.picard_max_iter"],
            quadrature=v["solver.quadrature"],
            singular_quadrature_refinement=v["solver.singular_quadrature_refinement"],
        )

    def constants(self, C_tilde=None) -> EstimateConstants:
        v = self._values
        F = self.nonlinearity()
        return EstimateConstants(
            lam=1.0 - v["instance.a0"] - abs(v["instance.eps"]),
            C_F=F.lipschitz,
            Cbar_F=F.growth,
            sigma=self.sigma,
            beta=v["noise.beta"],
            eta=v["attractor.eta"],
            c=v["constants.c"],
            c_hat=v["constants.c_hat"],
            C_tilde=dict(C_tilde or {}),
        )

    def calibrated_constants(self) -> EstimateConstants:
        """:meth:`constants` with ``C_tilde`` fitted on every fibre in ``noise.seeds``."""
        key = self.hash
        if key not in _CALIBRATED:
            gen = self.generator()
            gens = [gen.on(self.path(s)) for s in self.seeds]
            _CALIBRATED[key] = calibrate_constants(
                gens, self.constants(), self._values["constants.calibration_samples"], seed=self.seeds[0]
            )
        return _CALIBRATED[key]

    def initial_state(self, seed=0):
        """Initial datum selected by ``simulate.u0``."""
        K = self._values["instance.K"]
        k = np.arange(1, K + 1, dtype=float)
        kind = self._values["simulate.u0"]
        if kind == "zero":
            return np.zeros(K)
        if kind == "smooth":
            return np.where(k % 2 == 1, 8.0 / (np.pi * k**3), 0.0)
        if kind == "fisher_kpp":
            # sine coefficients of a front R * (1 - x/pi)^2 * x/pi * 4
            x = np.arange(1, K + 1) * np.pi / (K + 1)
            front = 4.0 * self._values["drift.R"] * (1 - x / np.pi) ** 2 * (x / np.pi)
            from .solver import to_spectral
            return to_spectral(front)
        rng = np.random.default_rng(seed)
        return rng.standard_normal(K) / k**2


def _env_overrides(environ):
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].replace("__", ".")
            # keys are case-sensitive in the config; match ignoring case
            match = [k for k in DEFAULTS if k.lower() == key.lower()]
            if not match:
                raise ConfigError(f"unknown key from environment variable {name}")
            out[match[0]] = value
    return out


def parse_set(items):
    """``["a.b=1", ...]`` -> ``{"a.b": "1"}``."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in DEFAULTS:
            raise ConfigError(f"unknown key {k!r}")
        out[k] = v
    return out


def load_config(path=None, overrides=None, environ=None) -> RunConfig:
    """Resolve defaults, file, environment and explicit overrides into a :class:`RunConfig`.

    ``path`` may also point at a run manifest, whose stored configuration is
    then used as the file layer.
    """
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if "config_hash" in data and isinstance(data.get("config"), dict):
            # a run manifest: replay its exact configuration
            data = data["config"]
        values.update(_flatten(data))
    values.update(_env_overrides(os.environ if environ is None else environ))
    values.update(overrides or {})
    return RunConfig(values)
