"""scikit-learn style wrappers.

Rows of ``X`` are states given by their sine coefficients ``(n, K)``, except
for :class:`SpectralProjector`, whose input is grid values.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .attractor import AttractorCloud, box_counting, pullback_cloud
from .config import RunConfig
from .solver import to_physical, to_spectral

__all__ = ["PullbackFlow", "BoxCountingDimension", "SpectralProjector"]


class SpectralProjector(TransformerMixin, BaseEstimator):
    """Grid values at ``x_j = j pi / (K + 1)`` to sine coefficients, and back.

    ``n_modes`` keeps only the leading modes after the projection; ``None``
    keeps all ``K``.
    """

    def __init__(self, n_modes=None):
        self.n_modes = n_modes

    def fit(self, X, y=None):
        X = check_array(X)
        K = X.shape[1]
        if self.n_modes is not None and not 1 <= self.n_modes <= K:
            raise ValueError(f"n_modes must lie in [1, {K}], got {self.n_modes}")
        self.n_features_in_ = K
        self.n_modes_ = K if self.n_modes is None else int(self.n_modes)
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} grid values, got {X.shape[1]}")
        return to_spectral(X)[:, : self.n_modes_]

    def inverse_transform(self, C):
        check_is_fitted(self)
        C = check_array(C)
        full = np.zeros((C.shape[0], self.n_features_in_))
        full[:, : C.shape[1]] = C
        return to_physical(full)


class PullbackFlow(TransformerMixin, BaseEstimator):
    """Map initial data to ``phi(T, theta_{-T} w, u0)`` on one fibre.

    Parameters
    ----------
    T : float
        Pullback time.
    seed : int
        Fibre seed.
    config : dict, optional
        Dotted-key overrides for :class:`~pathmild.config.RunConfig`.
    solver_dt : float, optional
        Step of the solver; defaults to ``attractor.solver_dt``.

    ``fit`` builds the noise path and checks the state dimension; it does not
    look at ``X`` beyond its shape.
    """

    def __init__(self, T=10.0, seed=1, config=None, solver_dt=None):
        self.T = T
        self.seed = seed
        self.config = config
        self.solver_dt = solver_dt

    def fit(self, X=None, y=None):
        cfg = RunConfig(dict(self.config or {}))
        K = cfg["instance.K"]
        if X is not None:
            X = check_array(X)
            if X.shape[1] != K:
                raise ValueError(f"states need {K} coefficients, got {X.shape[1]}")
        if not self.T > 0:
            raise ValueError("T must be > 0")
        self.config_ = cfg
        self.path_ = cfg.path(self.seed)
        self.n_features_in_ = K
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"states need {self.n_features_in_} coefficients, got {X.shape[1]}")
        cfg = self.config_
        dt = cfg["attractor.solver_dt"] if self.solver_dt is None else self.solver_dt
        cloud = pullback_cloud(X, self.T, self.path_, cfg.generator(), cfg.nonlinearity(), cfg.sigma,
                               cfg.solver_params(dt))
        return cloud.points


class BoxCountingDimension(BaseEstimator):
    """Box-counting slope of a cloud of states.

    After ``fit``: ``dimension_``, ``ci_`` and ``degenerate_``.
    """

    def __init__(self, eps_range=None, relative=True, confidence=0.95):
        self.eps_range = eps_range
        self.relative = relative
        self.confidence = confidence

    def fit(self, X, y=None):
        X = check_array(X)
        res = box_counting(AttractorCloud(X, 0.0), self.eps_range, self.relative, self.confidence)
        self.dimension_ = res.dimension
        self.ci_ = res.ci
        self.degenerate_ = res.degenerate
        self.counts_ = res.counts
        self.n_features_in_ = X.shape[1]
        return self

    def score(self, X, y=None):
        """Fitted dimension of ``X`` (refits on ``X``)."""
        return self.fit(X).dimension_
