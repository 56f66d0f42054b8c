import numpy as np
import pytest

from debiased_uq.operators import DenseOperator, generate_dft_operator, generate_gaussian_operator
from debiased_uq.simulate import complex_normal

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cd_lasso(A, b, lam, tol=1e-15, max_sweeps=200_000):
    """Cyclic coordinate descent for (1/2m)||Ax-b||^2 + lam||x||_1 (complex).

    Independent of the FISTA code path: exact coordinate minimization,
    dense matrix only.
    """
    m, N = A.shape
    x = np.zeros(N, dtype=complex)
    r = b.astype(complex).copy()
    col_sq = np.sum(np.abs(A) ** 2, axis=0)
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(N):
            if col_sq[j] == 0:
                continue
            rho = A[:, j].conj() @ r + col_sq[j] * x[j]
            mag = abs(rho)
            new = 0.0 if mag <= m * lam else rho * (1 - m * lam / mag) / col_sq[j]
            if new != x[j]:
                r -= A[:, j] * (new - x[j])
                delta = max(delta, abs(new - x[j]))
                x[j] = new
        if delta < tol:
            break
    return x


def random_instance(rng, m, N, s, noise=0.1, kind="gaussian"):
    seed = int(rng.integers(2**31))
    op = generate_gaussian_operator(m, N, seed) if kind == "gaussian" else generate_dft_operator(m, N, seed)
    x = np.zeros(N, dtype=complex)
    idx = rng.choice(N, size=s, replace=False)
    x[idx] = complex_normal(rng, s)
    eps = complex_normal(rng, m, noise**2)
    return op, x, eps, op.apply(x) + eps


@pytest.fixture
def small_gaussian():
    return generate_gaussian_operator(8, 12, 7)


@pytest.fixture
def explicit_identity():
    return DenseOperator(np.eye(6))
