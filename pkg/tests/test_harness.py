import csv
import json
import math
import logging

import numpy as np
import pytest
import yaml

from debiased_uq.harness import cli
from debiased_uq.harness.config import ConfigError, load_config, parse_config
from debiased_uq.harness.experiment import StageError, run_experiment
from debiased_uq.harness.metrics import export_histogram, hit_rates, rw_ratios

SMALL = {
    "name": "small",
    "N": 40, "m": 24, "s": 4,
    "split": {"estimation": 60, "test": 30},
    "target_rel_noise": 0.15,
    "signal_scale": "unit_energy",
    "estimator": {"kind": "lasso_fista", "lambda_prefactor": 0.1},
    "alphas": [0.05, 0.1],
    "seed": 3,
    "output_dir": "out",
}


def _write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


# -- configuration -----------------------------------------------------------

def test_config_defaults_and_n():
    cfg = parse_config(SMALL)
    assert cfg.n == 90 and cfg.alphas == [0.05, 0.1]
    assert cfg.estimator.kind == "lasso_fista" and cfg.gamma_mode == "per_component"


@pytest.mark.parametrize("patch,where", [
    ({"m": 50}, "m=50 exceeds N=40"),
    ({"split": {"estimation": 60, "test": 0}}, "split.test"),
    ({"alphas": [0.0]}, "alphas"),
    ({"estimator": {"kind": "nope"}}, "estimator"),
    ({"estimator": {"kind": "unrolled_ista", "depth": -1}}, "estimator.unrolled_ista.depth"),
    ({"n": 7}, "split sums to 90"),
    ({"split": {"estimation": 10, "test": 5}}, "must exceed 1"),
    ({"bogus": 1}, "bogus"),
    ({"correction": {"kind": "explicit"}}, "path"),
])
def test_config_errors_name_the_field(patch, where):
    with pytest.raises(ConfigError, match=where):
        parse_config({**SMALL, **patch})


def test_load_config_rejects_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("N: [1,\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


# -- metrics -----------------------------------------------------------------

def test_hit_rates_all_inside():
    x = np.array([[1.0, 2.0], [0.0, 1j]])
    hr = hit_rates(x, np.full(2, 0.1), x)
    assert hr.h == 1.0 and hr.h_S == 1.0


def test_hit_rates_one_miss():
    truth = np.array([[1.0, 1.0], [1.0, 1.0]])
    centers = truth.copy()
    centers[1, 0] += 0.5
    hr = hit_rates(centers, np.array([0.1, 0.1]), truth)
    assert hr.h == 0.75
    assert hr.h_S == 0.75
    assert list(hr.per_component) == [1.0, 0.5]
    assert list(hr.per_instance_support) == [0.5, 1.0]


def test_hit_rates_zero_radius_misses():
    truth = np.ones((3, 4))
    hr = hit_rates(truth + 0.1j, np.zeros(3), truth)
    assert hr.h == 0.0 and hr.h_S == 0.0


def test_hit_rates_empty_support_excluded(caplog):
    truth = np.array([[1.0, 0.0], [0.0, 0.0]])
    with caplog.at_level(logging.WARNING):
        hr = hit_rates(truth, np.full(2, 0.5), truth)
    assert hr.empty_support == 1 and hr.h_S == 1.0
    assert math.isnan(hr.per_instance_support[1])
    assert "empty support" in caplog.text


def test_rw_ratios_trivial_cases(rng):
    W = rng.standard_normal((5, 8)) + 1j * rng.standard_normal((5, 8))
    assert rw_ratios(W, np.zeros_like(W)) == (0.0, 0.0)
    assert rw_ratios(W, W) == pytest.approx((1.0, 1.0))
    with pytest.raises(ValueError):
        rw_ratios(np.zeros((2, 3)), np.ones((2, 3)))


def test_histogram_fit_on_standard_normal(tmp_path):
    rng = np.random.default_rng(0)
    z = rng.standard_normal(100_000) + 1j * rng.standard_normal(100_000)
    out = export_histogram(z.reshape(1000, 100), bins=40, path=tmp_path / "h.csv")
    for part in ("real", "imag"):
        assert abs(out[part]["mean"]) < 0.01
        assert abs(out[part]["std"] - 1) < 0.01
        assert abs(out[part]["skewness"]) < 0.05 and abs(out[part]["excess_kurtosis"]) < 0.1
        assert out[part]["counts"].sum() == 100_000
        assert out[part]["expected"].sum() == pytest.approx(100_000, rel=1e-3)
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert len(rows) == 80 and set(rows[0]) >= {"bin_left", "count", "fitted_density"}


def test_histogram_degenerate_and_too_small(caplog):
    with caplog.at_level(logging.WARNING):
        out = export_histogram(np.zeros((10, 5)))
    assert out["real"]["std"] == 0.0 and "degenerate" in caplog.text
    with pytest.raises(ValueError):
        export_histogram(np.ones((2, 5)))


# -- pipeline ----------------------------------------------------------------

def test_oracle_coverage_matches_level():
    cfg = parse_config({**SMALL, "estimator": {"kind": "oracle"},
                        "split": {"estimation": 60, "test": 400}})
    rep = run_experiment(cfg, write=False)
    n = cfg.N * cfg.split.test
    for a, res in rep.per_alpha.items():
        s = res.summary()
        # R is zero, so the data-driven and asymptotic regions coincide
        assert s["h"] == s["h_W"] == s["h_G"]
        assert abs(s["h"] - (1 - a)) < 3 * math.sqrt(a * (1 - a) / n) + 0.005
    assert rep.ratio_l2 == 0.0


def test_run_experiment_stage_error(monkeypatch):
    import debiased_uq.harness.experiment as exp

    def boom(*a, **k):
        raise FloatingPointError("diverged")
    monkeypatch.setattr(exp, "estimate_many", boom)
    with pytest.raises(StageError) as info:
        run_experiment(parse_config(SMALL), write=False)
    assert info.value.stage == "estimation"


def test_cli_validate(tmp_path, capsys):
    assert cli.main(["validate", str(_write(tmp_path, SMALL))]) == 0
    bad = _write(tmp_path, {**SMALL, "split": {"estimation": 60, "test": 0}}, "bad.yaml")
    assert cli.main(["validate", str(bad)]) == 1
    assert "split.test" in capsys.readouterr().err


def test_cli_run_is_deterministic_and_recountable(tmp_path):
    cfg_path = _write(tmp_path, SMALL)
    assert cli.main(["run", str(cfg_path)]) == 0
    text1 = (tmp_path / "out" / "report.json").read_text()
    assert cli.main(["run", str(cfg_path)]) == 0
    text2 = (tmp_path / "out" / "report.json").read_text()
    strip = lambda t: [ln for ln in t.splitlines() if '"wall_clock_seconds"' not in ln]
    assert strip(text1) == strip(text2)
    first = json.loads(text1)
    assert not list(tmp_path.glob(".out.partial-*"))

    arr = np.load(tmp_path / "out" / "arrays.npz")
    x_u, x = arr["test_x_u"], arr["test_x_true"]
    assert x_u.shape == (SMALL["N"], SMALL["split"]["test"])
    for a in SMALL["alphas"]:
        row = first["alphas"][f"{a:g}"]
        for key, name in (("h", "r_total"), ("h_W", "r_W"), ("h_G", "r_gauss")):
            r = arr[f"{name}_a{a:g}"]
            count = sum(abs(x_u[j, i] - x[j, i]) <= r[j]
                        for j in range(x.shape[0]) for i in range(x.shape[1]))
            assert count / x.size == pytest.approx(row[key], abs=1e-12)
        support = [(abs(x_u[:, i] - x[:, i]) <= arr[f"r_total_a{a:g}"])[x[:, i] != 0].mean()
                   for i in range(x.shape[1])]
        assert np.mean(support) == pytest.approx(row["h_S"], abs=1e-15)
    for f in ("hit_rates_components.csv", "hit_rates_support.csv", "histogram.csv"):
        assert (tmp_path / "out" / f).exists()


def test_cli_seed_override_changes_data(tmp_path):
    cfg_path = _write(tmp_path, {**SMALL, "estimator": {"kind": "oracle"}})
    assert cli.main(["run", str(cfg_path)]) == 0
    a = json.loads((tmp_path / "out" / "report.json").read_text())
    assert cli.main(["run", str(cfg_path), "--seed", "99"]) == 0
    b = json.loads((tmp_path / "out" / "report.json").read_text())
    assert b["config"]["seed"] == 99 and a["sigma"] != b["sigma"]


def test_cli_refuses_to_clobber_foreign_directory(tmp_path):
    (tmp_path / "out").mkdir()
    (tmp_path / "out" / "keep.txt").write_text("mine")
    assert cli.main(["run", str(_write(tmp_path, SMALL))]) == 2
    assert (tmp_path / "out" / "keep.txt").read_text() == "mine"


def test_cli_sweep_radii_shrink_with_alpha(tmp_path, capsys):
    cfg_path = _write(tmp_path, SMALL)
    assert cli.main(["sweep", str(cfg_path), "--alphas", "0.1", "0.05", "0.2"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "sweep.csv")))
    assert [float(r["alpha"]) for r in rows] == [0.05, 0.1, 0.2]
    for key in ("r_W_mean", "r_G_mean", "r_total_mean"):
        vals = [float(r[key]) for r in rows]
        assert vals[0] > vals[1] > vals[2]
    assert "r_total_mean" in capsys.readouterr().out
    assert cli.main(["sweep", str(cfg_path), "--alphas", "0.01"]) == 1


def test_cli_run_after_sweep(tmp_path):
    cfg_path = _write(tmp_path, {**SMALL, "estimator": {"kind": "oracle"}})
    assert cli.main(["sweep", str(cfg_path)]) == 0
    assert cli.main(["run", str(cfg_path)]) == 0
    assert (tmp_path / "out" / "report.json").exists()


def test_cli_radii_prints_table(tmp_path, capsys):
    assert cli.main(["radii", str(_write(tmp_path, SMALL))]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0].startswith("alpha") and len(out) == 3


def test_cli_explicit_correction(tmp_path):
    np.save(tmp_path / "M.npy", np.eye(SMALL["N"]))
    cfg = {**SMALL, "correction": {"kind": "explicit", "path": "M.npy"}}
    assert cli.main(["run", str(_write(tmp_path, cfg))]) == 0
    np.save(tmp_path / "M.npy", np.eye(3))
    assert cli.main(["validate", str(_write(tmp_path, cfg))]) == 0
    assert cli.main(["run", str(_write(tmp_path, cfg))]) == 1


def test_no_test_instances_is_config_error(tmp_path):
    cfg = {**SMALL, "split": {"estimation": 60, "test": 0}}
    assert cli.main(["run", str(_write(tmp_path, cfg))]) == 1


def test_shipped_configs_validate():
    from pathlib import Path
    paths = sorted((Path(__file__).parents[1] / "configs").glob("*.yaml"))
    assert paths
    for p in paths:
        assert cli.main(["validate", str(p)]) == 0
