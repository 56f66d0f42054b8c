"""Synthetic sparse regression datasets b = A x + eps."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .operators import MeasurementOperator


def complex_normal(rng: np.random.Generator, size, variance: float = 1.0) -> np.ndarray:
    """CN(0, variance): real and imaginary parts i.i.d. N(0, variance/2)."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def generate_sparse_signal(N: int, s: int, rng: np.random.Generator, variance: float = 1.0):
    """s-sparse vector with uniformly placed support and CN(0, variance) entries."""
    if not 0 <= s <= N:
        raise ValueError(f"sparsity s={s} must lie in [0, N={N}]")
    support = np.sort(rng.choice(N, size=s, replace=False))
    x = np.zeros(N, dtype=complex)
    x[support] = complex_normal(rng, s, variance)
    return x, support


def calibrate_sigma(op: MeasurementOperator, signals, target_rel_noise: float) -> float:
    """Noise level giving E||eps|| ~= target * mean ||A x||.

    Uses E||eps||^2 = m sigma^2 for eps ~ CN(0, sigma^2 I_m).
    """
    if not 0 < target_rel_noise <= 1:
        raise ValueError("target relative noise must lie in (0, 1]")
    X = np.asarray(signals, dtype=complex)
    if X.ndim == 1:
        X = X[:, None]
    if X.size == 0:
        raise ValueError("no signals given")
    energy = np.linalg.norm(op.apply(X), axis=0).mean()
    if energy == 0:
        raise ValueError("all signals are zero; relative noise is undefined")
    return float(target_rel_noise * energy / np.sqrt(op.m))


@dataclass(frozen=True)
class Split:
    train: int
    estimation: int
    test: int

    @property
    def n(self) -> int:
        return self.train + self.estimation + self.test

    def slices(self) -> dict[str, slice]:
        a, b = self.train, self.train + self.estimation
        return {"train": slice(0, a), "estimation": slice(a, b), "test": slice(b, self.n)}


@dataclass(frozen=True)
class RegressionInstance:
    x_true: np.ndarray
    support: np.ndarray
    eps: np.ndarray
    b: np.ndarray


@dataclass
class Dataset:
    """Instances stored column-wise: X is (N, n), E and B are (m, n)."""

    X: np.ndarray
    E: np.ndarray
    B: np.ndarray
    split: Split
    sigma: float
    seed: int

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def instance(self, i: int) -> RegressionInstance:
        x = self.X[:, i]
        return RegressionInstance(x, np.flatnonzero(x), self.E[:, i], self.B[:, i])

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        sl = self.split.slices()[name]
        return self.X[:, sl], self.E[:, sl], self.B[:, sl]

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        """Arrays to ``<path>.npz`` plus a JSON manifest ``<path>.json``."""
        path = Path(path)
        np.savez_compressed(path.with_suffix(".npz"), X=self.X, E=self.E, B=self.B)
        manifest = {"N": self.X.shape[0], "m": self.B.shape[0], "n": self.n,
                    "sigma": self.sigma, "seed": self.seed,
                    "split": {"train": self.split.train, "estimation": self.split.estimation,
                              "test": self.split.test}}
        manifest.update(extra or {})
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        path = Path(path)
        man = json.loads(path.with_suffix(".json").read_text())
        arr = np.load(path.with_suffix(".npz"))
        return cls(arr["X"], arr["E"], arr["B"], Split(**man["split"]), man["sigma"], man["seed"])


def synthesize_dataset(op: MeasurementOperator, N: int, s: int, n: int, target_rel_noise: float,
                       split: Split | tuple[int, int, int], seed: int,
                       signal_variance: float = 1.0) -> Dataset:
    """Signals, calibrated noise and measurements for n instances.

    Every instance draws from its own child stream of ``SeedSequence(seed)``,
    so the data does not depend on generation order.
    """
    if not isinstance(split, Split):
        split = Split(*split)
    if split.n != n:
        raise ValueError(f"split {split} sums to {split.n}, expected n={n}")
    if N != op.N:
        raise ValueError(f"N={N} does not match operator N={op.N}")
    children = np.random.SeedSequence(seed).spawn(n)
    streams = [[np.random.default_rng(s_) for s_ in c.spawn(2)] for c in children]
    X = np.zeros((N, n), dtype=complex)
    for i, (sig_rng, _) in enumerate(streams):
        X[:, i] = generate_sparse_signal(N, s, sig_rng, signal_variance)[0]
    sigma = calibrate_sigma(op, X, target_rel_noise)
    E = np.empty((op.m, n), dtype=complex)
    for i, (_, noise_rng) in enumerate(streams):
        E[:, i] = complex_normal(noise_rng, op.m, sigma**2)
    B = op.apply(X) + E
    return Dataset(X, E, B, split, sigma, seed)
