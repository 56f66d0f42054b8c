"""Command line entry point: ``debiased-uq {run,radii,validate,sweep} CONFIG``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
Progress goes to stderr; results go to files under the configured output
directory (``radii`` and ``sweep`` also print a short table).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys

from .config import ConfigError, load_config, resolve
from .experiment import (StageError, build_problem, compute_radii, evaluate_alpha,
                         run_estimation_phase, run_experiment, run_test_phase)

log = logging.getLogger("debiased_uq")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"{args.config}: ok ({cfg.name}, N={cfg.N}, m={cfg.m}, n={cfg.n})")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    report = run_experiment(cfg)
    out = resolve(cfg, cfg.output_dir)
    log.info("report written to %s (%.1fs)", out / "report.json", report.wall_clock_seconds)
    for a, row in report.alpha_table().items():
        log.info("alpha=%s h=%.4f h_S=%.4f h_W=%.4f h_W_S=%.4f h_G=%.4f h_G_S=%.4f",
                 a, row["h"], row["h_S"], row["h_W"], row["h_W_S"], row["h_G"], row["h_G_S"])
    return EXIT_OK


def cmd_radii(args) -> int:
    cfg = _load(args)
    p = build_problem(cfg)
    est = run_estimation_phase(p)
    print("alpha\tgamma_mean\tr_W_mean\tr_G_mean\tr_total_mean")
    for a in cfg.alphas:
        s = compute_radii(p, est, a).summary()
        print(f"{a:g}\t{s['gamma_mean']:.6g}\t{s['r_W_mean']:.6g}\t{s['r_gauss_mean']:.6g}\t"
              f"{s['r_total_mean']:.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    alphas = sorted(set(args.alphas or cfg.alphas))
    for a in alphas:
        if not 0 < a < 1 or cfg.split.estimation * a <= 1:
            raise ConfigError(f"--alphas: {a} infeasible for estimation size {cfg.split.estimation}")
    p = build_problem(cfg)
    est = run_estimation_phase(p)
    test = run_test_phase(p)
    rows = []
    for a in alphas:
        s = evaluate_alpha(p, est, test, a).summary()
        rows.append({"alpha": a, **s})
    out = resolve(cfg, cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fields = ["alpha", "r_W_mean", "r_G_mean", "r_total_mean", "gamma_mean",
              "h", "h_S", "h_W", "h_W_S", "h_G", "h_G_S"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    print("\t".join(fields))
    for r in rows:
        print("\t".join(f"{r[f]:.6g}" for f in fields))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="debiased-uq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, help_ in [("run", cmd_run, "full coverage experiment"),
                              ("radii", cmd_radii, "estimate confidence radii only"),
                              ("validate", cmd_validate, "check a config file"),
                              ("sweep", cmd_sweep, "evaluate several alphas on one dataset")]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--workers", type=int, default=None, help="worker threads for estimation")
        if name == "sweep":
            sp.add_argument("--alphas", type=float, nargs="+", default=None)
        sp.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
