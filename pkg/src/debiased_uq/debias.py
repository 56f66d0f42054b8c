"""Debiased estimator and the W + R split of its error."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimators import EstimatorSpec, LassoFista, estimate, lasso_fista
from .operators import CorrectionMatrix, MeasurementOperator

log = logging.getLogger(__name__)


@dataclass
class DebiasedEstimate:
    x_u: np.ndarray
    x_hat: np.ndarray


@dataclass
class ErrorDecomposition:
    W: np.ndarray
    R: np.ndarray


class EstimatorFailure(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"estimator failed on instance {index}: {cause}")
        self.index = index


def _M(M):
    return M if M is not None else CorrectionMatrix.identity()


def debias(x_hat, op: MeasurementOperator, M: CorrectionMatrix | None, b) -> DebiasedEstimate:
    """x_u = x_hat + (1/m) M A^*(b - A x_hat)."""
    M = _M(M)
    M.check(op.N)
    x_hat = np.asarray(x_hat, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if x_hat.shape[0] != op.N or b.shape[0] != op.m or x_hat.shape[1:] != b.shape[1:]:
        raise ValueError(f"shape mismatch: x_hat {x_hat.shape}, b {b.shape}, operator {op.shape}")
    x_u = x_hat + M(op.adjoint(b - op.apply(x_hat))) / op.m
    return DebiasedEstimate(x_u=x_u, x_hat=x_hat)


def decompose_error(x_hat, x_true, eps, op: MeasurementOperator,
                    M: CorrectionMatrix | None = None, check: bool = True) -> ErrorDecomposition:
    """W = (1/m) M A^* eps and R = (M Sigma_hat - I)(x_true - x_hat), matrix-free."""
    M = _M(M)
    M.check(op.N)
    x_hat = np.asarray(x_hat, dtype=complex)
    x_true = np.asarray(x_true, dtype=complex)
    eps = np.asarray(eps, dtype=complex)
    if x_hat.shape != x_true.shape or x_hat.shape[0] != op.N or eps.shape[0] != op.m:
        raise ValueError(f"shape mismatch: x_hat {x_hat.shape}, x_true {x_true.shape}, eps {eps.shape}")
    W = M(op.adjoint(eps)) / op.m
    d = x_true - x_hat
    R = M(op.adjoint(op.apply(d))) / op.m - d
    if check:
        b = op.apply(x_true) + eps
        err = debias(x_hat, op, M, b).x_u - x_true
        scale = max(float(np.max(np.abs(err), initial=0.0)), np.finfo(float).tiny)
        gap = float(np.max(np.abs(W + R - err), initial=0.0))
        if gap > 1e-10 * max(scale, 1.0):
            raise ArithmeticError(f"W + R deviates from x_u - x_true by {gap:.3e}")
    return ErrorDecomposition(W=W, R=R)


def estimate_many(spec: EstimatorSpec, op: MeasurementOperator, B, X_true=None,
                  workers: int = 1, chunk: int = 64, lipschitz: float | None = None,
                  diagnostics: bool = False):
    """Estimates for the columns of ``B``; output column order matches input.

    Columns are processed in fixed-size chunks, so the result does not
    depend on ``workers``. With ``diagnostics=True`` also returns a dict
    with per-instance solver iterations and KKT residuals (LASSO only).
    """
    B = np.asarray(B, dtype=complex)
    n = B.shape[1]
    bounds = [(i, min(i + chunk, n)) for i in range(0, n, chunk)]

    def solve(b, xt):
        if isinstance(spec, LassoFista):
            sol = lasso_fista(op, b, spec.lam, spec.max_iters, spec.rel_tol, lipschitz=lipschitz)
            return sol.x_hat, sol.iterations_used, sol.kkt_residual
        return estimate(spec, op, b, xt, lipschitz=lipschitz), None, None

    def run(lo_hi):
        lo, hi = lo_hi
        xt = None if X_true is None else X_true[:, lo:hi]
        try:
            return solve(B[:, lo:hi], xt)
        except Exception as exc:  # locate the failing instance
            for i in range(lo, hi):
                try:
                    solve(B[:, i], None if X_true is None else X_true[:, i])
                except Exception as inner:
                    raise EstimatorFailure(i, inner) from inner
            raise EstimatorFailure(lo, exc) from exc

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(bh) for bh in bounds]
    X = np.concatenate([p[0] for p in parts], axis=1) if parts else np.zeros((op.N, 0), complex)
    if not diagnostics:
        return X
    diag = {"iterations": None, "kkt_residual": None}
    if parts and parts[0][1] is not None:
        diag["iterations"] = np.concatenate([np.atleast_1d(p[1]) for p in parts])
        diag["kkt_residual"] = np.concatenate([np.atleast_1d(p[2]) for p in parts])
    return X, diag


def collect_remainders(spec: EstimatorSpec, op: MeasurementOperator, M: CorrectionMatrix | None,
                       B, X_true, workers: int = 1, lipschitz: float | None = None) -> np.ndarray:
    """Remainders R^(i) for an estimation set, returned as an (l, N) array.

    ``B`` is (m, l) and ``X_true`` is (N, l). The estimator must not have
    seen these instances.
    """
    B = np.asarray(B, dtype=complex)
    X_true = np.asarray(X_true, dtype=complex)
    if B.ndim != 2 or B.shape[1] == 0:
        raise ValueError("estimation set is empty")
    X_hat = estimate_many(spec, op, B, X_true, workers=workers, lipschitz=lipschitz)
    M = _M(M)
    d = X_true - X_hat
    R = M(op.adjoint(op.apply(d))) / op.m - d
    return R.T.copy()
