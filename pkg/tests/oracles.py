"""Independent reference computations used by the test-suite.

Nothing here calls into the solver's phi-function machinery; the oracles
rebuild multipliers from the stored potential and integrate the noise term
cell by cell with Gauss-Legendre quadrature.
"""
import numpy as np

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def integrating_factor_solution(path, gen, u0, sigma, horizon):
    """Mode-wise exact solution of ``dx = (-mu_k + a) x dt + sigma dw_k`` on the
    piecewise-linear path with the potential linear inside each cell.

    Returns ``(times, coeffs)`` on every noise node of ``[0, horizon]``.
    """
    gen = gen.on(path)
    h = path.dt
    i0 = path.node(0.0)
    n = int(round(horizon / h))
    a = np.asarray(gen.potential_nodes()[i0 : i0 + n + 1])
    w = path.values_at_nodes(i0, i0 + n, 1)
    mu = gen.eigenvalues
    # within-cell quadrature nodes r in (0, h)
    r = 0.5 * h * (_GL_X + 1.0)
    wq = 0.5 * h * _GL_W
    x = np.array(u0, dtype=float)
    out = np.empty((n + 1, len(mu)))
    out[0] = x
    for j in range(n):
        slope = (a[j + 1] - a[j]) / h
        # int_r^h a(s) ds for the linear potential of the cell
        int_full = a[j] * h + 0.5 * slope * h * h
        int_to_r = a[j] * r + 0.5 * slope * r * r
        decay = np.exp(-np.outer(h - r, mu) + (int_full - int_to_r)[:, None])
        step = np.exp(-mu * h + int_full)
        drift = (w[j + 1] - w[j]) / h
        x = step * x + sigma * drift * (wq @ decay)
        out[j + 1] = x
    return np.arange(n + 1) * h, out


def smooth_initial(K):
    """Sine coefficients of ``x (pi - x)``."""
    k = np.arange(1, K + 1)
    return np.where(k % 2 == 1, 8.0 / (np.pi * k**3.0), 0.0)


def _xbeta(values, beta):
    K = values.shape[-1]
    w = np.arange(1, K + 1, dtype=float) ** (4.0 * beta)
    return np.sqrt(0.5 * np.pi * np.sum(w * values * values, axis=-1))


def absorbing_radius_oracle(path, constants, sub=10, near=1.0, chunk=2000):
    """``rho(w)`` by brute-force quadrature on a mesh ``sub`` times finer than the grid.

    Away from ``s = 0`` each noise cell gets ``sub`` Gauss-Legendre points with
    the exact norm of the linearly interpolated path.  On ``[-near, 0]`` the
    weakly singular integral is rewritten with ``v = (-s)**beta``, which
    removes the ``(-s)**(beta - 1)`` factor, and integrated on a uniform
    ``v``-mesh.  No product integration, no incomplete gamma functions.
    """
    c, lam, CF = constants.c, constants.lam, constants.C_F
    gap = constants.lam - c * CF
    sigma, beta = constants.sigma, constants.beta
    drift = c * constants.Cbar_F / gap
    if sigma == 0:
        return drift
    h = path.dt
    o = path.offset
    n_near = int(round(near / h))
    gx, gw = np.polynomial.legendre.leggauss(sub)
    k = c * CF

    def norm_at(s):
        # exact interpolation between nodes: s <= 0
        pos = o + s / h
        i = np.floor(pos).astype(int)
        frac = (pos - i)[..., None]
        cum = path._data.cum
        v = (1 - frac) * cum[i] + frac * cum[np.minimum(i + 1, cum.shape[0] - 1)] - cum[o]
        return _xbeta(v, beta)

    exp_int = 0.0
    sing_far = 0.0
    # cells j = 0..o-1 cover [-(j+1) h, -j h]
    for j0 in range(0, o, chunk):
        j = np.arange(j0, min(o, j0 + chunk))
        s = (-(j[:, None] + 0.5) * h + 0.5 * h * gx[None, :])
        N = norm_at(s)
        wts = 0.5 * h * gw[None, :]
        exp_int += float(np.sum(wts * np.exp(k * s) * N))
        far = j >= n_near
        sing_far += float(np.sum((wts * np.exp(lam * s) * (-s) ** (beta - 1.0) * N)[far]))
    # near zero with v = (-s)^beta: ds (-s)^(beta-1) = dv / beta
    vmax = near**beta
    m = 20000
    edges = np.linspace(0.0, vmax, m + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None] + 0.5 * (vmax / m) * gx[None, :]
    s = -(mid ** (1.0 / beta))
    sing_near = float(np.sum(0.5 * (vmax / m) * gw[None, :] * np.exp(lam * s) * norm_at(s))) / beta
    exp_term = c * CF * sigma * constants.c_hat * exp_int
    sing_term = sigma * constants.C(1.0 - beta) * lam / gap * (sing_far + sing_near)
    return drift + exp_term + sing_term
