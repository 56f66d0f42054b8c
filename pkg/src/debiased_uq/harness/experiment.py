"""End-to-end coverage experiment: data, estimation, radii, evaluation, report."""
from __future__ import annotations

import csv
import json
import logging
import os
import shutil
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..debias import debias, estimate_many
from ..estimators import (LIPSCHITZ_MARGIN, LassoFista, Oracle, UnrolledIsta, default_lambda)
from ..operators import (CorrectionMatrix, MeasurementOperator, estimate_lipschitz,
                         generate_dft_operator, generate_gaussian_operator, gram_diagonal)
from ..simulate import Dataset, Split, synthesize_dataset
from ..uq import (RadiusSet, RemainderStats, estimate_remainder_stats, radius_data_driven)
from .config import ConfigError, ExperimentConfig, resolve
from .metrics import HitRates, export_histogram, histogram_summary, hit_rates, rw_ratios

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    log.info("stage: %s", name)
    try:
        yield
    except (StageError, ConfigError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class Problem:
    cfg: ExperimentConfig
    op: MeasurementOperator
    M: CorrectionMatrix
    gram: np.ndarray
    data: Dataset
    spec: object
    lam: float | None
    lipschitz: float | None


@dataclass
class EstimationPhase:
    R: np.ndarray  # (l, N)
    W: np.ndarray  # (l, N)
    stats: RemainderStats
    ratio_l2: float
    ratio_linf: float
    diag: dict


@dataclass
class EvaluationPhase:
    x_u: np.ndarray  # (N, k)
    x_true: np.ndarray  # (N, k)
    diag: dict


@dataclass
class AlphaResult:
    radii: RadiusSet
    data_driven: HitRates
    asymptotic: HitRates
    gaussian: HitRates

    def summary(self) -> dict:
        r = self.radii
        return {"h": self.data_driven.h, "h_S": self.data_driven.h_S,
                "h_W": self.asymptotic.h, "h_W_S": self.asymptotic.h_S,
                "h_G": self.gaussian.h, "h_G_S": self.gaussian.h_S,
                "r_W_mean": float(np.mean(r.r_W)), "r_G_mean": float(np.mean(r.r_gauss)),
                "r_total_mean": float(np.mean(r.r_total)),
                "gamma_mean": float(np.mean(r.gamma)),
                "empty_support_instances": self.data_driven.empty_support}


def build_operator(cfg: ExperimentConfig) -> MeasurementOperator:
    if cfg.operator.kind == "gaussian":
        return generate_gaussian_operator(cfg.m, cfg.N, cfg.operator.seed)
    return generate_dft_operator(cfg.m, cfg.N, cfg.operator.seed)


def build_correction(cfg: ExperimentConfig) -> CorrectionMatrix:
    if cfg.correction.kind == "identity":
        return CorrectionMatrix.identity()
    path = resolve(cfg, cfg.correction.path)
    try:
        M = np.load(path)
    except OSError as exc:
        raise ConfigError(f"correction.path: cannot load {path}: {exc}") from None
    if M.shape != (cfg.N, cfg.N):
        raise ConfigError(f"correction.path: matrix has shape {M.shape}, expected {(cfg.N, cfg.N)}")
    return CorrectionMatrix(M)


def build_estimator(cfg: ExperimentConfig, sigma: float, lipschitz: float | None):
    est = cfg.estimator
    if est.kind == "oracle":
        return Oracle(), None
    lam = est.lam if est.lam is not None else default_lambda(sigma, cfg.m, cfg.N, est.lambda_prefactor)
    if est.kind == "lasso_fista":
        return LassoFista(lam, est.max_iters, est.rel_tol), lam
    return UnrolledIsta(lam, est.depth, est.mu if est.mu is not None else lipschitz), lam


def build_problem(cfg: ExperimentConfig) -> Problem:
    with stage("operator"):
        op = build_operator(cfg)
        M = build_correction(cfg)
        gram = gram_diagonal(op, M).values
    with stage("data"):
        variance = 1.0 if cfg.signal_scale == "unit_entries" else 1.0 / max(cfg.s, 1)
        split = Split(cfg.split.train, cfg.split.estimation, cfg.split.test)
        data = synthesize_dataset(op, cfg.N, cfg.s, cfg.n, cfg.target_rel_noise, split,
                                  cfg.seed, signal_variance=variance)
        if split.train:
            log.info("estimator has fixed weights; %d training instances are unused", split.train)
    with stage("estimator"):
        lipschitz = None
        if cfg.estimator.kind != "oracle":
            lipschitz = LIPSCHITZ_MARGIN * estimate_lipschitz(op)
        spec, lam = build_estimator(cfg, data.sigma, lipschitz)
    return Problem(cfg, op, M, gram, data, spec, lam, lipschitz)


def _solver_summary(diag: dict) -> dict | None:
    if diag.get("iterations") is None:
        return None
    return {"iterations_mean": float(np.mean(diag["iterations"])),
            "iterations_max": int(np.max(diag["iterations"])),
            "kkt_residual_max": float(np.max(diag["kkt_residual"]))}


def run_estimation_phase(p: Problem) -> EstimationPhase:
    """Remainders and their statistics on the estimation split."""
    X, E, B = p.data.part("estimation")
    with stage("estimation"):
        X_hat, diag = estimate_many(p.spec, p.op, B, X, workers=p.cfg.workers,
                                    lipschitz=p.lipschitz, diagnostics=True)
        d = X - X_hat
        R = (p.M(p.op.adjoint(p.op.apply(d))) / p.op.m - d).T
        W = (p.M(p.op.adjoint(E)) / p.op.m).T
        x_u = debias(X_hat, p.op, p.M, B).x_u
        gap = np.max(np.abs(W + R - (x_u - X).T), initial=0.0)
        scale = max(np.max(np.abs(x_u - X), initial=0.0), 1.0)
        if gap > 1e-10 * scale:
            raise ArithmeticError(f"decomposition identity violated by {gap:.3e}")
    with stage("statistics"):
        stats = estimate_remainder_stats(R, p.cfg.stats_mode, m=p.op.m)
        if np.all(W == 0):
            ratio_l2 = ratio_linf = float("nan")
        else:
            ratio_l2, ratio_linf = rw_ratios(W, R)
    return EstimationPhase(R, W, stats, ratio_l2, ratio_linf, diag)


def run_test_phase(p: Problem) -> EvaluationPhase:
    X, _, B = p.data.part("test")
    with stage("test-estimation"):
        X_hat, diag = estimate_many(p.spec, p.op, B, X, workers=p.cfg.workers,
                                    lipschitz=p.lipschitz, diagnostics=True)
        x_u = debias(X_hat, p.op, p.M, B).x_u
    return EvaluationPhase(x_u, X, diag)


def compute_radii(p: Problem, est: EstimationPhase, alpha: float) -> RadiusSet:
    with stage("radii"):
        return radius_data_driven(est.stats, p.gram, p.data.sigma, p.op.m, alpha,
                                  p.cfg.gamma_mode, grid=p.cfg.gamma_grid)


def evaluate_alpha(p: Problem, est: EstimationPhase, test: EvaluationPhase, alpha: float) -> AlphaResult:
    radii = compute_radii(p, est, alpha)
    with stage("evaluation"):
        return AlphaResult(radii,
                           hit_rates(test.x_u, radii.r_total, test.x_true),
                           hit_rates(test.x_u, radii.r_W, test.x_true),
                           hit_rates(test.x_u, radii.r_gauss, test.x_true))


@dataclass
class CoverageReport:
    config: dict
    sigma: float
    lam: float | None
    lipschitz: float | None
    operator: dict
    stats: dict
    ratio_l2: float
    ratio_linf: float
    per_alpha: dict[float, AlphaResult]
    histogram: dict | None
    solver: dict
    warnings: list[str] = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    # arrays kept for sidecars
    gram: np.ndarray | None = None
    stats_arrays: RemainderStats | None = None
    test: EvaluationPhase | None = None
    dft_mask: np.ndarray | None = None

    def alpha_table(self) -> dict:
        return {f"{a:g}": res.summary() for a, res in sorted(self.per_alpha.items())}

    def to_json(self) -> dict:
        return {
            "library": {"name": "debiased_uq", "version": __version__},
            "config": self.config,
            "operator": self.operator,
            "sigma": self.sigma,
            "lambda": self.lam,
            "lipschitz": self.lipschitz,
            "remainder_stats": self.stats,
            "sigma_R_estimator": "m * unbiased complex sample variance of R_j",
            "ratio_l2": self.ratio_l2,
            "ratio_linf": self.ratio_linf,
            "alphas": self.alpha_table(),
            "histogram": self.histogram,
            "solver": self.solver,
            "warnings": self.warnings,
            "sidecars": {"arrays": "arrays.npz", "components_csv": "hit_rates_components.csv",
                         "support_csv": "hit_rates_support.csv", "histogram_csv": "histogram.csv"},
            "wall_clock_seconds": self.wall_clock_seconds,
        }


def _soft_invariants(per_alpha: dict[float, AlphaResult]) -> list[str]:
    out = []
    for a, res in sorted(per_alpha.items()):
        s = res.summary()
        if s["r_W_mean"] > s["r_G_mean"]:
            out.append(f"alpha={a:g}: mean r_W {s['r_W_mean']:.4g} exceeds mean r_G {s['r_G_mean']:.4g}")
        if s["r_W_mean"] > s["r_total_mean"]:
            out.append(f"alpha={a:g}: mean r_W exceeds mean data-driven radius")
    for w in out:
        log.warning("soft invariant: %s", w)
    return out


def run_experiment(cfg: ExperimentConfig, write: bool = True,
                   alphas: list[float] | None = None) -> CoverageReport:
    """Full pipeline. Writes the report into ``cfg.output_dir`` unless ``write=False``."""
    t0 = time.perf_counter()
    alphas = sorted(set(alphas or cfg.alphas))
    for a in alphas:
        if not 0 < a < 1 or cfg.split.estimation * a <= 1:
            raise ConfigError(f"alphas: {a} is infeasible for estimation size {cfg.split.estimation}")
    p = build_problem(cfg)
    est = run_estimation_phase(p)
    test = run_test_phase(p)
    per_alpha = {a: evaluate_alpha(p, est, test, a) for a in alphas}
    with stage("histogram"):
        hist = None
        if est.R.size >= 30:
            hist = export_histogram(est.R, bins=cfg.histogram.bins)
    report = CoverageReport(
        config=cfg.model_dump(mode="json"),
        sigma=p.data.sigma, lam=p.lam, lipschitz=p.lipschitz,
        operator={k: v for k, v in p.op.descriptor().items() if k != "mask"},
        stats=est.stats.as_dict(), ratio_l2=est.ratio_l2, ratio_linf=est.ratio_linf,
        per_alpha=per_alpha, histogram=histogram_summary(hist) if hist else None,
        solver={"estimation": _solver_summary(est.diag), "test": _solver_summary(test.diag)},
        warnings=_soft_invariants(per_alpha),
        gram=p.gram, stats_arrays=est.stats, test=test,
        dft_mask=getattr(p.op, "mask", None),
    )
    report.wall_clock_seconds = time.perf_counter() - t0
    if write:
        with stage("report"):
            write_report(report, resolve(cfg, cfg.output_dir), est.R, cfg)
    return report


def _write_outputs(report: CoverageReport, out: Path, R: np.ndarray, cfg: ExperimentConfig):
    arrays = {"gram": report.gram,
              "S_hat": report.stats_arrays.S_hat,
              "sigma_R_hat": report.stats_arrays.sigma_R_hat,
              "var_complex_R": report.stats_arrays.var_complex_R}
    for a, res in sorted(report.per_alpha.items()):
        tag = f"a{a:g}"
        arrays[f"gamma_{tag}"] = res.radii.gamma
        arrays[f"r_W_{tag}"] = res.radii.r_W
        arrays[f"r_total_{tag}"] = res.radii.r_total
        arrays[f"r_gauss_{tag}"] = res.radii.r_gauss
    if report.dft_mask is not None:
        arrays["dft_mask"] = report.dft_mask
    if cfg.save_regions and report.test is not None:
        arrays["test_x_u"] = report.test.x_u
        arrays["test_x_true"] = report.test.x_true
    np.savez_compressed(out / "arrays.npz", **arrays)

    alphas = sorted(report.per_alpha)
    with open(out / "hit_rates_components.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component"] + [f"{kind}_{a:g}" for a in alphas for kind in ("h", "h_W", "h_G")])
        for j in range(len(report.gram)):
            row = [j]
            for a in alphas:
                r = report.per_alpha[a]
                row += [r.data_driven.per_component[j], r.asymptotic.per_component[j],
                        r.gaussian.per_component[j]]
            w.writerow(row)
    with open(out / "hit_rates_support.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance"] + [f"{kind}_{a:g}" for a in alphas for kind in ("h_S", "h_W_S", "h_G_S")])
        k = len(report.per_alpha[alphas[0]].data_driven.per_instance_support)
        for i in range(k):
            row = [i]
            for a in alphas:
                r = report.per_alpha[a]
                row += [r.data_driven.per_instance_support[i], r.asymptotic.per_instance_support[i],
                        r.gaussian.per_instance_support[i]]
            w.writerow(row)
    if R.size >= 30:
        export_histogram(R, bins=cfg.histogram.bins, path=out / "histogram.csv")
        if cfg.histogram.per_component:
            comp_dir = out / "histograms"
            comp_dir.mkdir()
            for j in range(R.shape[1]):
                if R.shape[0] >= 30:
                    export_histogram(R, components=[j], bins=cfg.histogram.bins,
                                     path=comp_dir / f"component_{j}.csv")
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")


OUTPUT_NAMES = {"report.json", "arrays.npz", "hit_rates_components.csv", "hit_rates_support.csv",
                "histogram.csv", "histograms", "sweep.csv"}


def _owned(out_dir: Path) -> bool:
    """True if every entry of ``out_dir`` is something this package writes."""
    return all(p.name in OUTPUT_NAMES for p in out_dir.iterdir())


def write_report(report: CoverageReport, out_dir: Path, R: np.ndarray, cfg: ExperimentConfig) -> Path:
    """Write into a scratch directory and move it into place only on success.

    An existing ``out_dir`` is replaced only if it holds nothing but our own
    outputs.
    """
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_dir.parent / f".{out_dir.name}.partial-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    try:
        _write_outputs(report, tmp, R, cfg)
        if out_dir.exists():
            if not out_dir.is_dir() or not _owned(out_dir):
                raise FileExistsError(f"{out_dir} exists and holds files not written by this tool")
            shutil.rmtree(out_dir)
        tmp.rename(out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out_dir
