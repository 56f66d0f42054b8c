"""Estimators x_hat = X(b): LASSO by monotone FISTA, fixed-depth ISTA, oracle.

The LASSO objective throughout is ``(1/2m)||Ax - b||^2 + lam ||x||_1`` over
complex x. Solvers accept ``b`` as a vector or as an (m, n) array of
right-hand sides; columns are solved independently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .operators import MeasurementOperator, estimate_lipschitz

# power iteration approaches the top eigenvalue from below
LIPSCHITZ_MARGIN = 1.05


def soft_threshold(z, tau):
    """Complex soft-thresholding ``z * max(1 - tau/|z|, 0)``; phase preserved."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("threshold must be nonnegative")
    z = np.asarray(z)
    mag = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        factor = np.where(mag > tau, 1.0 - tau / np.where(mag > 0, mag, 1.0), 0.0)
    out = z * factor
    return out[()] if out.ndim == 0 else out


def default_lambda(sigma: float, m: int, N: int, prefactor: float = 10.0) -> float:
    """``prefactor * sigma/sqrt(m) * (2 + sqrt(12 log N))``."""
    return prefactor * sigma / math.sqrt(m) * (2.0 + math.sqrt(12.0 * math.log(N)))


def lasso_objective(op: MeasurementOperator, b, x, lam: float) -> np.ndarray:
    r = op.apply(x) - b
    return _objective(r, x, lam, op.m)


def _objective(r, x, lam, m):
    return 0.5 / m * np.sum(np.abs(r) ** 2, axis=0) + lam * np.sum(np.abs(x), axis=0)


def kkt_residual(op: MeasurementOperator, b, x, lam: float) -> np.ndarray:
    """Distance of ``-(1/m) A^*(Ax - b)`` from ``lam * d||x||_1``, max over j."""
    g = op.adjoint(op.apply(x) - b) / op.m
    mag = np.abs(x)
    on = mag > 0
    phase = np.where(on, x / np.where(on, mag, 1.0), 0.0)
    res = np.where(on, np.abs(g + lam * phase), np.maximum(np.abs(g) - lam, 0.0))
    return res.max(axis=0)


@dataclass
class LassoSolution:
    x_hat: np.ndarray
    iterations_used: int | np.ndarray
    final_objective: float | np.ndarray
    kkt_residual: float | np.ndarray
    objective_history: list | None = None


def lasso_fista(op: MeasurementOperator, b, lam: float, max_iters: int = 5000,
                rel_tol: float = 1e-8, lipschitz: float | None = None,
                track_objective: bool = False, patience: int = 10,
                kkt_tol: float | None = None) -> LassoSolution:
    """Monotone FISTA for the complex LASSO.

    A candidate step is rejected (the iterate kept) whenever it would raise
    the objective, so the objective sequence is non-increasing. A column is
    frozen once ``patience`` consecutive accepted steps each change its
    objective by less than ``rel_tol`` relative and, if ``kkt_tol`` is set,
    its KKT residual is below ``kkt_tol``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    b = np.asarray(b, dtype=complex)
    if not np.all(np.isfinite(b)):
        raise ValueError("measurements contain non-finite values")
    single = b.ndim == 1
    B = b[:, None] if single else b
    if B.shape[0] != op.m:
        raise ValueError(f"b has {B.shape[0]} rows, operator has m={op.m}")
    n = B.shape[1]
    m = op.m

    L = lipschitz if lipschitz is not None else LIPSCHITZ_MARGIN * estimate_lipschitz(op)
    step = 1.0 / L
    thr = lam * step

    x = np.zeros((op.N, n), dtype=complex)
    Ax = np.zeros((m, n), dtype=complex)
    F = _objective(Ax - B, x, lam, m)
    y, Ay = x.copy(), Ax.copy()
    t = np.ones(n)
    active = np.ones(n, dtype=bool)
    iters = np.zeros(n, dtype=int)
    streak = np.zeros(n, dtype=int)
    history = [F.copy()] if track_objective else None

    for _ in range(max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa, Axa, ya, Aya, Ba = x[:, idx], Ax[:, idx], y[:, idx], Ay[:, idx], B[:, idx]
        grad = op.adjoint(Aya - Ba) / m
        z = soft_threshold(ya - step * grad, thr)
        Az = op.apply(z)
        Fz = _objective(Az - Ba, z, lam, m)
        Fa = F[idx]
        accept = Fz <= Fa
        x_new = np.where(accept, z, xa)
        Ax_new = np.where(accept, Az, Axa)
        F_new = np.where(accept, Fz, Fa)

        ta = t[idx]
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * ta * ta))
        c1, c2 = ta / t_new, (ta - 1.0) / t_new
        y[:, idx] = x_new + c1 * (z - x_new) + c2 * (x_new - xa)
        Ay[:, idx] = Ax_new + c1 * (Az - Ax_new) + c2 * (Ax_new - Axa)

        rel = np.abs(Fa - F_new) / np.maximum(np.abs(Fa), np.finfo(float).tiny)
        x[:, idx], Ax[:, idx], F[idx], t[idx] = x_new, Ax_new, F_new, t_new
        iters[idx] += 1
        small = accept & (rel < rel_tol)
        streak[idx] = np.where(small, streak[idx] + 1, np.where(accept, 0, streak[idx]))
        done = streak[idx] >= patience
        if kkt_tol is not None and np.any(done):
            cand = idx[done]
            res = kkt_residual(op, B[:, cand], x[:, cand], lam)
            done[done] = res <= kkt_tol
        active[idx[done]] = False
        if track_objective:
            history.append(F.copy())
        if not np.all(np.isfinite(F_new)):
            raise FloatingPointError("FISTA produced a non-finite objective")

    kkt = kkt_residual(op, B, x, lam)
    if single:
        hist = [float(h[0]) for h in history] if track_objective else None
        return LassoSolution(x[:, 0], int(iters[0]), float(F[0]), float(kkt[0]), hist)
    return LassoSolution(x, iters, F, kkt, history)


def ista(op: MeasurementOperator, b, lam: float, n_iter: int, mu: float) -> np.ndarray:
    """``n_iter`` plain ISTA steps from zero with step 1/mu and threshold lam/mu."""
    if n_iter < 0:
        raise ValueError("depth must be >= 0")
    if not mu > 0:
        raise ValueError("mu must be positive")
    b = np.asarray(b, dtype=complex)
    x = np.zeros((op.N,) + b.shape[1:], dtype=complex)
    if n_iter == 0:
        return x
    Atb = op.adjoint(b) / op.m
    for _ in range(n_iter):
        grad = op.adjoint(op.apply(x)) / op.m - Atb
        x = soft_threshold(x - grad / mu, lam / mu)
    return x


def unrolled_ista(op: MeasurementOperator, b, lam: float, K: int, mu: float | None = None) -> np.ndarray:
    """Fixed-depth ISTA network with untrained (ISTA) weights.

    ``mu`` defaults to the estimated Lipschitz constant of ``A^*A/m``.
    """
    if mu is None:
        mu = LIPSCHITZ_MARGIN * estimate_lipschitz(op)
    return ista(op, b, lam, K, mu)


@dataclass(frozen=True)
class LassoFista:
    lam: float
    max_iters: int = 5000
    rel_tol: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class UnrolledIsta:
    lam: float
    depth: int
    mu: float | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.mu is not None and not self.mu > 0:
            raise ValueError("mu must be positive")


@dataclass(frozen=True)
class Oracle:
    """Returns the ground truth; only meaningful in simulations."""


EstimatorSpec = Union[LassoFista, UnrolledIsta, Oracle]


def estimate(spec: EstimatorSpec, op: MeasurementOperator, b, x_true=None,
             lipschitz: float | None = None) -> np.ndarray:
    """Run the estimator described by ``spec``; ``b`` may hold several columns."""
    if isinstance(spec, Oracle):
        if x_true is None:
            raise ValueError("Oracle estimator needs the ground truth")
        return np.array(x_true, dtype=complex)
    if isinstance(spec, LassoFista):
        return lasso_fista(op, b, spec.lam, spec.max_iters, spec.rel_tol, lipschitz=lipschitz).x_hat
    if isinstance(spec, UnrolledIsta):
        mu = spec.mu
        if mu is None:
            mu = lipschitz if lipschitz is not None else LIPSCHITZ_MARGIN * estimate_lipschitz(op)
        return ista(op, b, spec.lam, spec.depth, mu)
    raise TypeError(f"unknown estimator spec {spec!r}")
