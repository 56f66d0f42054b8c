"""Confidence radii for debiased estimators.

Three radius families are produced per component j:

* ``r_W``: the classical radius from the Gaussian part alone,
  ``sigma sqrt(gram_j/m) sqrt(log(1/alpha))``;
* ``r_total``: Gaussian tail at level ``gamma*alpha`` plus an empirical
  Chebyshev bound at level ``(1-gamma)*alpha`` on ``|R_j|``, with ``gamma``
  optimized to shorten the radius;
* ``r_gauss``: the radius obtained by treating R as complex Gaussian and
  adding its variance to the noise variance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class InfeasibleBudget(ValueError):
    """Raised when ``l * alpha <= 1`` leaves no room for the Chebyshev term."""


class StatsMode(str, Enum):
    PER_COMPONENT = "per_component"
    POOLED = "pooled"


class GammaMode(str, Enum):
    PER_COMPONENT = "per_component"
    SHARED = "shared"


def _check_level(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)) or np.any(~(x < 1)):
        raise ValueError(f"{name} must lie in (0, 1)")
    return x


def gaussian_term_radius(sigma, gram_jj, m, beta):
    """beta-quantile of |W_j|, whose tail is exp(-r^2 m / (sigma^2 gram_jj))."""
    beta = _check_level(beta, "beta")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    gram_jj = np.asarray(gram_jj, dtype=float)
    if np.any(gram_jj < 0):
        raise ValueError("gram diagonal must be nonnegative")
    r = sigma * np.sqrt(gram_jj / m) * np.sqrt(np.log(1.0 / beta))
    return r[()] if np.ndim(r) == 0 else r


def rayleigh_tail(r, sigma, gram_jj, m):
    """P(|W_j| > r) for W_j ~ CN(0, sigma^2 gram_jj / m)."""
    return np.exp(-np.asarray(r, dtype=float) ** 2 * m / (sigma**2 * np.asarray(gram_jj, dtype=float)))


def chebyshev_multiplier(l, beta):
    """C(l, beta) = sqrt((l^2 - 1) / (l^2 beta - l)).

    For i.i.d. samples with sample mean S and unbiased std s, a fresh
    draw X satisfies P(|X - S| >= C s) <= beta. Requires beta > 1/l.
    """
    beta_arr = np.asarray(beta, dtype=float)
    if l < 2:
        raise InfeasibleBudget(f"need at least 2 samples, got l={l}")
    if np.any(beta_arr * l <= 1.0):
        raise InfeasibleBudget(f"Chebyshev budget beta={beta} must exceed 1/l = {1.0 / l:.6g}")
    c = np.sqrt((l * l - 1.0) / (l * l * beta_arr - l))
    return c[()] if np.ndim(c) == 0 else c


def chebyshev_bound(l, c):
    """Exact (floored) empirical Chebyshev tail bound at multiplier ``c``."""
    val = math.floor((l + 1) * (l * l - 1 + l * c * c) / (l * l * c * c)) / (l + 1)
    return min(1.0, val)


@dataclass
class RemainderStats:
    mode: StatsMode
    S_hat: np.ndarray
    sigma_R_hat: np.ndarray
    var_complex_R: np.ndarray
    l: int
    m: int

    def as_dict(self) -> dict:
        return {"mode": self.mode.value, "l": self.l, "m": self.m,
                "S_hat_mean": float(np.mean(self.S_hat)),
                "sigma_R_hat_mean": float(np.mean(self.sigma_R_hat)),
                "var_complex_R_mean": float(np.mean(self.var_complex_R))}


def estimate_remainder_stats(remainders, mode: StatsMode | str = StatsMode.PER_COMPONENT,
                             m: int = 1) -> RemainderStats:
    """Sample mean/std of |R_j| and m times the complex sample variance of R_j.

    ``remainders`` is an (l, N) array (or a list of length-N vectors).
    """
    mode = StatsMode(mode)
    R = np.asarray(remainders, dtype=complex)
    if R.ndim == 1:
        R = R[None, :]
    l, N = R.shape
    if l < 2:
        raise ValueError(f"need at least 2 remainder samples, got {l}")
    mag = np.abs(R)
    if mode is StatsMode.PER_COMPONENT:
        S = mag.mean(axis=0)
        sd = mag.std(axis=0, ddof=1)
        var_c = m * np.sum(np.abs(R - R.mean(axis=0)) ** 2, axis=0) / (l - 1)
    else:
        S = np.full(N, mag.mean())
        sd = np.full(N, mag.std(ddof=1))
        var_c = np.full(N, m * np.sum(np.abs(R - R.mean()) ** 2) / (l * N - 1))
    return RemainderStats(mode, S, sd, var_c, l, m)


def _gamma_max(l, alpha):
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if l * alpha <= 1:
        raise InfeasibleBudget(
            f"l*alpha = {l * alpha:g} <= 1: the gamma interval is empty; "
            "use more estimation samples or a larger alpha")
    return 1.0 - 1.0 / (l * alpha)


def radius_objective(gamma, sigma, gram_jj, m, l, alpha, sigma_R_hat):
    """Gamma-dependent part of the data-driven radius (S_hat excluded)."""
    gamma = np.asarray(gamma, dtype=float)
    g = sigma * np.sqrt(np.asarray(gram_jj, dtype=float) / m) * np.sqrt(np.log(1.0 / (gamma * alpha)))
    c = np.sqrt((l * l - 1.0) / (l * l * (1.0 - gamma) * alpha - l))
    return g + c * np.asarray(sigma_R_hat, dtype=float)


def _minimize(f, gmax, n, grid, tol):
    """Vectorized grid search plus golden-section refinement.

    ``f(gamma)`` maps an (n, k) array to (n, k) objective values.
    Returns the (n,) minimizers inside (0, gmax).
    """
    h = gmax / grid
    pts = (np.arange(grid) + 0.5) * h
    vals = f(np.broadcast_to(pts, (n, grid)))
    best = np.argmin(vals, axis=1)
    lo = np.maximum(pts[best] - h, 0.5 * h)
    hi = np.minimum(pts[best] + h, gmax - 0.5 * h)
    a, b = lo.copy(), hi.copy()
    while np.max(b - a) > tol:
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        left = f(c[:, None])[:, 0] < f(d[:, None])[:, 0]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    g_ref = 0.5 * (a + b)
    f_ref = f(g_ref[:, None])[:, 0]
    f_grid = vals[np.arange(n), best]
    return np.where(f_ref <= f_grid, g_ref, pts[best])


def optimize_gamma(sigma, gram_jj, m, l, alpha, sigma_R_hat, grid: int = 1000,
                   tol: float = 1e-8):
    """Budget split gamma minimizing the data-driven radius.

    Works elementwise on array inputs. Components with ``sigma_R_hat == 0``
    get gamma = 1, which reduces the radius to the classical one.
    """
    gmax = _gamma_max(l, alpha)
    gram_jj, sr = np.broadcast_arrays(np.asarray(gram_jj, dtype=float),
                                      np.asarray(sigma_R_hat, dtype=float))
    scalar = gram_jj.ndim == 0
    gram_v, sr_v = np.atleast_1d(gram_jj).ravel(), np.atleast_1d(sr).ravel()
    gamma = np.ones(gram_v.shape)
    live = sr_v > 0
    if np.any(live):
        gv, sv = gram_v[live][:, None], sr_v[live][:, None]
        gamma[live] = _minimize(
            lambda g: radius_objective(g, sigma, gv, m, l, alpha, sv),
            gmax, int(live.sum()), grid, tol)
    gamma = gamma.reshape(np.shape(gram_jj))
    return float(gamma) if scalar else gamma


def optimize_shared_gamma(sigma, gram, m, l, alpha, sigma_R_hat, grid: int = 1000,
                          tol: float = 1e-8) -> float:
    """One gamma for all components, minimizing the component-averaged radius."""
    gmax = _gamma_max(l, alpha)
    g_mean = float(np.mean(np.sqrt(np.asarray(gram, dtype=float))))
    s_mean = float(np.mean(sigma_R_hat))
    if s_mean == 0:
        return 1.0
    # averaging sqrt(gram) first matches mean_j of the per-component objective
    out = _minimize(lambda g: radius_objective(g, sigma, g_mean**2, m, l, alpha, s_mean),
                    gmax, 1, grid, tol)
    return float(out[0])


@dataclass
class RadiusSet:
    alpha: float
    gamma_mode: GammaMode
    gamma: np.ndarray
    r_W: np.ndarray
    r_total: np.ndarray
    r_gauss: np.ndarray

    def summary(self) -> dict:
        return {"alpha": self.alpha, "gamma_mode": self.gamma_mode.value,
                "gamma_mean": float(np.mean(self.gamma)),
                "r_W_mean": float(np.mean(self.r_W)),
                "r_gauss_mean": float(np.mean(self.r_gauss)),
                "r_total_mean": float(np.mean(self.r_total))}


def radius_data_driven(stats: RemainderStats, gram, sigma: float, m: int, alpha: float,
                       gamma_mode: GammaMode | str = GammaMode.PER_COMPONENT,
                       grid: int = 1000) -> RadiusSet:
    """Data-driven radii: Gaussian term + Chebyshev term + mean |R_j|."""
    gamma_mode = GammaMode(gamma_mode)
    gram = np.asarray(gram, dtype=float)
    l = stats.l
    _gamma_max(l, alpha)
    if gamma_mode is GammaMode.PER_COMPONENT:
        gamma = optimize_gamma(sigma, gram, m, l, alpha, stats.sigma_R_hat, grid=grid)
    else:
        gamma = np.full(gram.shape, optimize_shared_gamma(sigma, gram, m, l, alpha,
                                                          stats.sigma_R_hat, grid=grid))
    gamma = np.asarray(gamma, dtype=float)
    r_W = gaussian_term_radius(sigma, gram, m, alpha)
    g_term = sigma * np.sqrt(gram / m) * np.sqrt(np.log(1.0 / (np.minimum(gamma, 1.0) * alpha)))
    cheb = np.zeros_like(gram)
    live = (stats.sigma_R_hat > 0) & (gamma < 1.0)
    if np.any(live):
        cheb[live] = chebyshev_multiplier(l, (1.0 - gamma[live]) * alpha) * stats.sigma_R_hat[live]
    r_total = g_term + cheb + stats.S_hat
    r_gauss = radius_gaussian_adjusted(stats, gram, sigma, m, alpha)
    return RadiusSet(float(alpha), gamma_mode, gamma, np.asarray(r_W, dtype=float),
                     r_total, r_gauss)


def radius_gaussian_adjusted(stats: RemainderStats, gram, sigma: float, m: int, alpha: float):
    """sqrt(sigma^2 gram_j + (Sigma_R)_jj) / sqrt(m) * sqrt(log(1/alpha))."""
    _check_level(alpha, "alpha")
    gram = np.asarray(gram, dtype=float)
    return np.sqrt((sigma**2 * gram + stats.var_complex_R) / m) * np.sqrt(np.log(1.0 / alpha))


def region_contains(x_u_j, z, r_j) -> bool | np.ndarray:
    """Whether z lies in the closed disc of radius r_j around x_u_j."""
    if np.any(np.asarray(r_j) < 0):
        raise ValueError("radius must be nonnegative")
    out = np.abs(np.asarray(x_u_j) - np.asarray(z)) <= r_j
    return bool(out) if np.ndim(out) == 0 else out
