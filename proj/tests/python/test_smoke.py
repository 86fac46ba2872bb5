import json
import math
import os

import pytest

import uadbo


def test_geometry_basics():
    base = uadbo.default_baseline()
    grid = uadbo.station_grid()
    assert len(grid) == 101
    assert grid[0] == 0.0 and grid[-1] == 1.0
    yu, yl = uadbo.cst_evaluate(base)
    assert len(yu) == 101
    assert yu[0] == 0.0
    assert 0.10 < uadbo.max_thickness(base) < 0.15
    assert uadbo.section_area(base) > 0


def test_oracle_and_uq_values():
    assert abs(uadbo.korn_ma_dd(0.12, 0.824) - 0.7476) < 1e-12
    assert abs(uadbo.wave_term(0.80, 0.75) - 1.25e-4) < 1e-9
    assert abs(uadbo.t_quantile(0.95, 15) - 1.75305) < 1e-4
    assert uadbo.t_quantile(0.5, 7) == 0.0
    assert abs(uadbo.ece_from_coverages([1.0] * 9) - 0.5) < 1e-12
    assert abs(uadbo.kl_std_normal([1.0] * 4, [0.0] * 4) - 2.0) < 1e-12


def test_oracle_trim_and_fields():
    base = uadbo.default_baseline()
    r = uadbo.oracle_evaluate(base, 0.73, cl=0.824)
    assert abs(r.cl - 0.824) < 1e-5
    assert r.cd > 0
    assert len(r.cp.upper) == 101
    cl, cd, cm = uadbo.integrate_coefficients(r.cp, r.cf, r.aoa_deg)
    assert abs(cl - r.cl) < 1e-3
    assert abs(cd - r.cd) < 1e-3


def test_buffet_onset_closed_form():
    aoas = [(-1.0 + 0.05 * i) for i in range(121)]
    cls = [0.1 * a - 0.05 * max(0.0, a - 2.0) ** 2 for a in aoas]
    aoa_star, cl_buffet = uadbo.buffet_onset(aoas, cls)
    assert abs(aoa_star - (2.0 + math.sqrt(0.2))) < 1e-4
    assert abs(cl_buffet - 0.234721) < 1e-4


def test_cli_pipeline(tmp_path):
    os.chdir(tmp_path)
    cfg = tmp_path / "small.cfg"
    cfg.write_text(
        "dataset.airfoils = 24\n"
        "dataset.conditions_per_airfoil = 4\n"
        "training.max_epochs = 4\n"
        "training.patience = 4\n"
        "training.cv_runs = 1\n"
    )
    assert uadbo.run_cli(["--config", str(cfg), "--seed", "3",
                          "gen-data", "--out", "data.jsonl"]) == 0
    assert uadbo.run_cli(["--config", str(cfg), "--seed", "3", "train",
                          "--data", "data.jsonl", "--out", "m.json", "--mode", "gsed"]) == 0
    assert uadbo.run_cli(["--config", str(cfg), "calibrate",
                          "--ckpt", "m.json", "--data", "data.jsonl"]) == 0
    assert uadbo.run_cli(["--config", str(cfg), "evaluate", "--ckpt", "m.json",
                          "--data", "data.jsonl", "--out", "metrics.json"]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert "train" in metrics and "test" in metrics
    assert metrics["train"]["coverage"]["inside"] > 0.5

    summary = uadbo.predict_cdbar("m.json", uadbo.default_baseline(), seed=7)
    assert summary.sigma >= 0
    assert summary.lb <= summary.mean <= summary.ub


def test_cli_error_is_nonzero():
    assert uadbo.run_cli(["train", "--data", "/nonexistent.jsonl", "--out", "x.json"]) != 0
