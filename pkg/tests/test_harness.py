import csv
import json
import math

import numpy as np
import pytest

from gibbsmix import bounds as B
from gibbsmix import harness as H
from gibbsmix.cli import main
from gibbsmix.config import resolve_config


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_cell_seeds_distinct_and_stable():
    seeds = [H.cell_seed(7, i) for i in range(50)]
    assert len(set(seeds)) == 50
    assert seeds == [H.cell_seed(7, i) for i in range(50)]


def test_fit_exponent_recovers_power_law():
    ns = np.array([2, 4, 8, 16, 32])
    fit = H.fit_exponent(ns, 3.0 * ns ** 1.5)
    assert fit["exponent"] == pytest.approx(1.5, abs=1e-12)


def test_bounds_run_writes_csv_and_manifest(tmp_path):
    cfg = resolve_config({"kind": "bounds", "n": 10, "kappa": 4, "M": 4, "gamma": 0.1})
    res = H.run_experiment(cfg, tmp_path)
    assert res.exit_code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert "bounds.csv" in manifest["files"] and manifest["config"]["n"] == 10
    rows = {(r["variant"], r["quantity"]): r["value"] for r in _read(tmp_path / "bounds.csv")}
    assert float(rows["lee_vempala", "tau_bound"]) == B.mixing_time_bound(4, 10, 4, 0.1).tau
    assert float(rows["chen", "tau_bound"]) == B.mixing_time_bound(4, 10, 4, 0.1, "chen").tau


def test_small_sweep_and_byte_identical_rerun(tmp_path):
    cfg = resolve_config({"kind": "sweep", "dims": [2, 4], "kappas": [1, 4], "replicas_per_dim": 300,
                          "T_max": 2000, "seed": 11})
    res = H.run_experiment(cfg, tmp_path / "a")
    assert res.exit_code == 0
    rows = _read(tmp_path / "a" / "sweep.csv")
    assert len(rows) == 4
    for r in rows:
        assert float(r["tau_hat"]) <= float(r["tau_bound_lee_vempala"])
    _, cmp = H.rerun_manifest(tmp_path / "a" / "manifest.json", tmp_path / "b")
    assert cmp and all(cmp.values())


def test_emit_report_flags_bound_excess(tmp_path):
    good = H.SweepRow(n=2, kappa=1.0, M=2.0, gamma=0.1, tau_hat=4, censored=False,
                      tau_bound_lee_vempala=10.0, tau_bound_chen=None, seed=1)
    bad = H.SweepRow(n=4, kappa=1.0, M=4.0, gamma=0.1, tau_hat=50, censored=False,
                     tau_bound_lee_vempala=10.0, tau_bound_chen=None, seed=2)
    _, violations, _ = H.emit_report([good, bad], tmp_path)
    assert violations >= 1
    with pytest.raises(ValueError):
        H.emit_report([], tmp_path)


def test_verify_isoperimetry_small_run(tmp_path):
    cfg = resolve_config({"kind": "verify_isoperimetry", "grids": [[3, 2]], "cubes": 5,
                          "halfspaces": 3, "random_partitions": 10, "ball_cells": 12})
    res = H.run_experiment(cfg, tmp_path)
    assert res.violations == 0
    rows = _read(tmp_path / "isoperimetry.csv")
    assert {r["check"] for r in rows} >= {"cube_uniform", "cube_target", "fact_density_ratio",
                                          "negative_control", "three_set_refined", "three_set_random"}
    assert all(r["holds"] == "true" for r in rows)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["bounds", "--n", "5", "--kappa", "2", "--M", "3",
                 "--output-dir", str(tmp_path / "ok")]) == 0
    assert main(["bounds", "--n", "5", "--kappa", "2", "--M", "3", "--gamma", "0.6",
                 "--output-dir", str(tmp_path / "bad")]) == 2
    assert "violates" in capsys.readouterr().err


def test_cli_config_and_flag_override(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("kind: sample\nn: 3\nT: 10\nseed: 4\n")
    out = tmp_path / "run"
    assert main(["sample", "--config", str(cfg), "--T", "20", "--lazy",
                 "--output-dir", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["T"] == 20 and manifest["config"]["chain"]["lazy"] is True
    assert main(["bounds", "--config", str(cfg), "--output-dir", str(out)]) == 2


def test_cli_rerun(tmp_path, capsys):
    assert main(["calibrate", "--samples", "2000", "--ess-length", "500",
                 "--output-dir", str(tmp_path / "a")]) in (0, 1)
    assert main(["rerun", str(tmp_path / "a" / "manifest.json"),
                 "--output-dir", str(tmp_path / "b")]) == 0
    assert "byte-identically" in capsys.readouterr().out


def test_build_target_families():
    for fam in ("gaussian", "two_point", "logcosh", "perturbed_gaussian"):
        t = H.build_target(fam, 3, 4.0)
        assert t.dim == 3 and math.isfinite(t.kappa)
