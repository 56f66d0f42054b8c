"""Coverage bookkeeping: hit rates, R/W norm ratios, remainder histograms."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sps

log = logging.getLogger(__name__)


@dataclass
class HitRates:
    h: float
    h_S: float
    per_component: np.ndarray  # h_j, length N
    per_instance_support: np.ndarray  # h_S^(i), NaN where the support is empty
    empty_support: int


def hit_rates(centers, radii, truths, supports=None) -> HitRates:
    """Empirical coverage of discs |center - truth| <= radius.

    ``centers`` and ``truths`` are (N, k) with one test instance per column;
    ``radii`` broadcasts against them. ``supports`` is a boolean (N, k)
    mask, defaulting to ``truths != 0``.
    """
    centers = np.asarray(centers)
    truths = np.asarray(truths)
    if centers.shape != truths.shape or centers.ndim != 2:
        raise ValueError(f"shape mismatch: centers {centers.shape}, truths {truths.shape}")
    radii = np.asarray(radii, dtype=float)
    if radii.ndim == 1:
        radii = radii[:, None]
    supports = truths != 0 if supports is None else np.asarray(supports, dtype=bool)
    hit = np.abs(centers - truths) <= radii
    per_comp = hit.mean(axis=1)
    sizes = supports.sum(axis=0)
    covered = (hit & supports).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_inst = np.where(sizes > 0, covered / np.maximum(sizes, 1), np.nan)
    empty = int(np.sum(sizes == 0))
    if empty:
        log.warning("%d test instance(s) with empty support excluded from h_S", empty)
    h_S = float(np.nanmean(per_inst)) if empty < per_inst.size else float("nan")
    return HitRates(float(per_comp.mean()), h_S, per_comp, per_inst, empty)


def rw_ratios(W, R) -> tuple[float, float]:
    """Mean over instances of ||R||_2/||W||_2 and ||R||_inf/||W||_inf.

    ``W`` and ``R`` are (l, N) with one instance per row.
    """
    W = np.atleast_2d(np.asarray(W))
    R = np.atleast_2d(np.asarray(R))
    if W.shape != R.shape or W.shape[0] == 0:
        raise ValueError("W and R must be non-empty arrays of equal shape")
    w2 = np.linalg.norm(W, axis=1)
    winf = np.abs(W).max(axis=1)
    if np.any(w2 == 0):
        raise ValueError("W vanishes on some instance; is sigma zero?")
    return (float(np.mean(np.linalg.norm(R, axis=1) / w2)),
            float(np.mean(np.abs(R).max(axis=1) / winf)))


def _fit_part(values: np.ndarray, bins: int) -> dict:
    mu = float(values.mean())
    sd = float(values.std())
    if sd == 0.0:
        log.warning("degenerate remainder histogram: all samples equal %.3g", mu)
        counts, edges = np.histogram(values, bins=bins)
        expected = counts.astype(float)
        density = np.zeros(bins)
        skew = kurt = 0.0
    else:
        counts, edges = np.histogram(values, bins=bins)
        cdf = sps.norm.cdf(edges, loc=mu, scale=sd)
        expected = values.size * np.diff(cdf)
        centers = 0.5 * (edges[1:] + edges[:-1])
        density = sps.norm.pdf(centers, loc=mu, scale=sd)
        skew = float(sps.skew(values))
        kurt = float(sps.kurtosis(values))
    return {"mean": mu, "std": sd, "skewness": skew, "excess_kurtosis": kurt,
            "edges": edges, "counts": counts, "expected": expected, "density": density}


def export_histogram(remainders, components=None, bins: int = 60,
                     path: str | Path | None = None) -> dict:
    """Histograms of Re(R) and Im(R) with maximum-likelihood Gaussian fits.

    ``remainders`` is an (l, N) array; ``components`` selects columns
    (default: all, pooled). Writes a plot-ready CSV when ``path`` is given.
    """
    R = np.atleast_2d(np.asarray(remainders, dtype=complex))
    if components is not None:
        R = R[:, np.asarray(components)]
    vals = R.ravel()
    if vals.size < 30:
        raise ValueError(f"need at least 30 samples for a fit, got {vals.size}")
    out = {"n_samples": int(vals.size),
           "real": _fit_part(vals.real, bins), "imag": _fit_part(vals.imag, bins)}
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["part", "bin_left", "bin_right", "count", "fitted_density", "expected_count"])
            for part in ("real", "imag"):
                f = out[part]
                for k in range(len(f["counts"])):
                    w.writerow([part, repr(float(f["edges"][k])), repr(float(f["edges"][k + 1])),
                                int(f["counts"][k]), repr(float(f["density"][k])),
                                repr(float(f["expected"][k]))])
    return out


def histogram_summary(hist: dict) -> dict:
    keys = ("mean", "std", "skewness", "excess_kurtosis")
    return {"n_samples": hist["n_samples"],
            **{part: {k: hist[part][k] for k in keys} for part in ("real", "imag")}}
