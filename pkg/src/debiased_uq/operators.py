"""Measurement operators A (dense Gaussian, subsampled DFT, explicit) and
the correction matrix M used by the debiasing step.

All operators accept a single vector or a 2-D array whose columns are
independent vectors, so batches of instances can be pushed through one
matrix product or one FFT call.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class OperatorKind(str, Enum):
    DENSE_GAUSSIAN = "gaussian"
    SUBSAMPLED_DFT = "dft"
    EXPLICIT = "explicit"


class LipschitzError(RuntimeError):
    """Power iteration did not produce a usable Lipschitz constant."""


def _check_rows(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim not in (1, 2) or x.shape[0] != n:
        raise ValueError(f"{what}: expected leading dimension {n}, got shape {x.shape}")
    return x


class MeasurementOperator:
    """Linear map C^N -> C^m with its exact adjoint.

    Instances are immutable; ``apply``/``adjoint`` never mutate state and
    are safe to call from several threads.
    """

    kind: OperatorKind
    m: int
    N: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dense(self) -> np.ndarray:
        return self.apply(np.eye(self.N, dtype=complex))

    def column_sq_norms(self) -> np.ndarray:
        """Squared column norms sum_i |A_ij|^2."""
        return np.sum(np.abs(self.to_dense()) ** 2, axis=0)

    def descriptor(self) -> dict:
        raise NotImplementedError

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.N)

    def __matmul__(self, x):
        return self.apply(x)


class DenseOperator(MeasurementOperator):
    def __init__(self, matrix: np.ndarray, kind: OperatorKind = OperatorKind.EXPLICIT,
                 seed: int | None = None):
        matrix = np.array(matrix, dtype=complex)
        if matrix.ndim != 2 or 0 in matrix.shape:
            raise ValueError(f"operator matrix must be a non-empty 2-D array, got {matrix.shape}")
        matrix.setflags(write=False)
        self.matrix = matrix
        self._adj = matrix.conj().T
        self.kind = kind
        self.m, self.N = matrix.shape
        self.seed = seed

    def apply(self, x):
        return self.matrix @ _check_rows(x, self.N, "apply")

    def adjoint(self, y):
        return self._adj @ _check_rows(y, self.m, "adjoint")

    def to_dense(self):
        return self.matrix.copy()

    def column_sq_norms(self):
        return np.sum(np.abs(self.matrix) ** 2, axis=0)

    def descriptor(self):
        return {"kind": self.kind.value, "m": self.m, "N": self.N, "seed": self.seed}


class SubsampledDFT(MeasurementOperator):
    """Rows ``mask`` of the N-point DFT, scaled so every entry has modulus 1.

    With ``F`` the unitary DFT this is ``A = sqrt(N) * P F``, which is the
    unnormalized ``numpy.fft.fft`` restricted to the mask.
    """

    kind = OperatorKind.SUBSAMPLED_DFT

    def __init__(self, N: int, mask: np.ndarray, seed: int | None = None):
        mask = np.asarray(mask, dtype=np.int64)
        if mask.ndim != 1 or mask.size == 0:
            raise ValueError("mask must be a non-empty 1-D index array")
        if mask.min() < 0 or mask.max() >= N:
            raise ValueError(f"mask indices must lie in [0, {N})")
        if np.unique(mask).size != mask.size:
            raise ValueError("mask indices must be distinct")
        mask = mask.copy()
        mask.setflags(write=False)
        self.N = int(N)
        self.m = int(mask.size)
        self.mask = mask
        self.seed = seed

    def apply(self, x):
        x = _check_rows(x, self.N, "apply")
        return np.fft.fft(x, axis=0)[self.mask]

    def adjoint(self, y):
        y = _check_rows(y, self.m, "adjoint")
        full = np.zeros((self.N,) + y.shape[1:], dtype=complex)
        full[self.mask] = y
        return self.N * np.fft.ifft(full, axis=0)

    def column_sq_norms(self):
        return np.full(self.N, float(self.m))

    def descriptor(self):
        return {"kind": self.kind.value, "m": self.m, "N": self.N, "seed": self.seed,
                "mask": self.mask.tolist()}


def generate_gaussian_operator(m: int, N: int, rng_seed: int) -> DenseOperator:
    """Dense A with i.i.d. CN(0, 1) entries (real and imaginary parts N(0, 1/2))."""
    if m < 1 or N < 1:
        raise ValueError(f"need m >= 1 and N >= 1, got m={m}, N={N}")
    rng = np.random.default_rng(rng_seed)
    A = (rng.standard_normal((m, N)) + 1j * rng.standard_normal((m, N))) / np.sqrt(2.0)
    return DenseOperator(A, kind=OperatorKind.DENSE_GAUSSIAN, seed=rng_seed)


def generate_dft_operator(m: int, N: int, rng_seed: int) -> SubsampledDFT:
    if N < 1 or m < 1:
        raise ValueError(f"need m >= 1 and N >= 1, got m={m}, N={N}")
    if m > N:
        raise ValueError(f"cannot keep m={m} rows of an N={N} point DFT")
    rng = np.random.default_rng(rng_seed)
    mask = np.sort(rng.choice(N, size=m, replace=False))
    return SubsampledDFT(N, mask, seed=rng_seed)


def apply(op: MeasurementOperator, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


def adjoint(op: MeasurementOperator, y: np.ndarray) -> np.ndarray:
    return op.adjoint(y)


@dataclass(frozen=True)
class CorrectionMatrix:
    """M in the debiasing step. ``matrix=None`` means the identity."""

    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.matrix is not None:
            M = np.array(self.matrix, dtype=complex)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ValueError(f"correction matrix must be square, got {M.shape}")
            M.setflags(write=False)
            object.__setattr__(self, "matrix", M)

    @classmethod
    def identity(cls) -> "CorrectionMatrix":
        return cls(None)

    @property
    def is_identity(self) -> bool:
        return self.matrix is None

    def check(self, N: int) -> None:
        if self.matrix is not None and self.matrix.shape != (N, N):
            raise ValueError(f"correction matrix has shape {self.matrix.shape}, expected {(N, N)}")

    def __call__(self, v: np.ndarray) -> np.ndarray:
        if self.matrix is None:
            return v
        return self.matrix @ v

    def descriptor(self) -> dict:
        return {"kind": "identity" if self.is_identity else "explicit"}


@dataclass(frozen=True)
class GramDiagonal:
    values: np.ndarray  # (M Sigma_hat M^*)_jj
    sigma_hat_diag: np.ndarray  # Sigma_hat_jj

    def __post_init__(self):
        if np.any(self.values < 0) or np.any(self.sigma_hat_diag < 0):
            raise ValueError("Gram diagonal entries must be nonnegative")


def gram_diagonal(op: MeasurementOperator, M: CorrectionMatrix | None = None) -> GramDiagonal:
    """Diagonal of M Sigma_hat M^* with Sigma_hat = A^* A / m."""
    M = M or CorrectionMatrix.identity()
    M.check(op.N)
    sigma_hat = op.column_sq_norms() / op.m
    if M.is_identity:
        values = sigma_hat
    else:
        # (M Sigma_hat M^*)_jj = ||A M^* e_j||^2 / m
        AM = op.apply(M.matrix.conj().T)
        values = np.sum(np.abs(AM) ** 2, axis=0) / op.m
    return GramDiagonal(values=np.asarray(values, dtype=float),
                        sigma_hat_diag=np.asarray(sigma_hat, dtype=float))


def estimate_lipschitz(op: MeasurementOperator, n_iter: int = 20, tol: float = 1e-6,
                       seed: int = 0) -> float:
    """Largest eigenvalue of A^* A / m by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.N) + 1j * rng.standard_normal(op.N)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(n_iter):
        w = op.adjoint(op.apply(v)) / op.m
        new = float(np.real(np.vdot(v, w)))
        norm = np.linalg.norm(w)
        if not np.isfinite(norm) or norm == 0.0:
            raise LipschitzError("power iteration collapsed to zero or non-finite vector")
        v = w / norm
        if abs(new - est) <= tol * max(abs(new), 1e-300):
            est = new
            break
        est = new
    if not np.isfinite(est) or est <= 0:
        raise LipschitzError(f"power iteration returned invalid estimate {est}")
    return est
