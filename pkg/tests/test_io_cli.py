"""Serialization round trips and command-line workflows."""

import json

import numpy as np
import pytest

from topokit import cli, io
from topokit.fields import DensityField
from topokit.optimizers import Trajectory


def test_density_csv_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.uniform(0, 1, 24)
    path = tmp_path / "field.csv"
    io.write_field_csv(path, values, 6, 4)
    back = io.read_field_csv(path)
    assert (back.nx, back.ny) == (6, 4)
    assert np.array_equal(back.values, values)


def test_csv_layout_is_row_major_top_first(tmp_path):
    values = np.arange(6, dtype=float) / 10.0
    path = tmp_path / "field.csv"
    io.write_field_csv(path, values, 3, 2)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 2
    assert [float(v) for v in lines[0].split(",")] == [0.0, 0.1, 0.2]


def test_pgm_roundtrip_and_header(tmp_path):
    rng = np.random.default_rng(1)
    values = rng.uniform(0, 1, 32)
    path = tmp_path / "field.pgm"
    io.write_pgm(path, values, 8, 4)
    data = path.read_bytes()
    assert data.startswith(b"P5\n8 4\n255\n")
    image = io.read_pgm(path)
    assert image.shape == (4, 8)
    assert np.abs(image.ravel() - values).max() <= 0.5 / 255 + 1e-12


def test_trajectory_csv_roundtrip(tmp_path):
    traj = Trajectory()
    rng = np.random.default_rng(2)
    for i in range(5):
        traj.record(10.0 - i, 0.4, 0.0, rng.standard_normal(3), np.zeros(2))
    path = tmp_path / "trajectory.csv"
    io.write_trajectory_csv(path, traj)
    columns = io.read_trajectory_csv(path)
    assert list(columns["iteration"]) == [0, 1, 2, 3, 4]
    assert np.array_equal(columns["objective"], np.asarray(traj.objective))
    assert np.isnan(columns["grad_angle_rad"][0])


def test_displacement_csv_blocks(tmp_path):
    u = np.arange(2 * 6, dtype=float)
    path = tmp_path / "disp.csv"
    io.write_displacement_csv(path, u, 2, 1, dofs_per_node=2)
    blocks = path.read_text().strip().split("\n\n")
    assert len(blocks) == 2  # x block then y block


def run_cli(*argv):
    return cli.main(list(argv))


def test_cli_optimize_twobar_manifest(tmp_path):
    out = tmp_path / "run"
    assert run_cli("optimize", "--preset", "twobar-baseline", "--out", str(out)) == 0
    manifest = io.read_manifest(out / "manifest.json")
    final = manifest["outcome"]["final_point"]
    assert abs(final[0] - 0.0) <= 0.01 and abs(final[1] - 1.0) <= 0.01
    assert (out / "trajectory.csv").exists()
    assert (out / "metrics.json").exists()


def test_cli_invalid_problem_lists_catalog(tmp_path, capsys):
    cfg = {
        "problem": {"name": "bogus"},
        "reparam": {"kind": "direct"},
        "optimizer": {"kind": "mma", "move_limit": 0.1, "asyinit": 0.2},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code = run_cli("optimize", "--config", str(cfg_path), "--out", str(tmp_path / "o"))
    assert code != 0
    err = capsys.readouterr().err
    assert "michell" in err and "twobar" in err


def test_cli_optimize_grid_writes_artifacts(tmp_path):
    cfg = {
        "problem": {"name": "mbb", "nx": 16, "ny": 8, "v0": 0.5},
        "reparam": {"kind": "direct"},
        "optimizer": {"kind": "mma", "move_limit": 0.2, "asyinit": 0.5},
        "budget": 10,
        "seed": 0,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert run_cli("optimize", "--config", str(cfg_path), "--out", str(out)) == 0
    for name in (
        "manifest.json",
        "trajectory.csv",
        "final_design.csv",
        "final_design.pgm",
        "best_design.csv",
        "thresholded.csv",
        "thresholded.pgm",
        "metrics.json",
        "theta.json",
        "theta.bin",
    ):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["thresholded_objective_rescaled"] == pytest.approx(
        metrics["thresholded_objective"] * metrics["thresholded_volume"] / 0.5
    )


def test_cli_runs_with_identical_configs_are_bit_identical(tmp_path):
    cfg = {
        "problem": {"name": "mbb", "nx": 16, "ny": 8, "v0": 0.5},
        "reparam": {"kind": "siren", "width": 6, "hidden_layers": 2},
        "optimizer": {"kind": "adam", "learning_rate": 0.02},
        "budget": 8,
        "seed": 7,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("optimize", "--config", str(cfg_path), "--out", str(out1)) == 0
    assert run_cli("optimize", "--config", str(cfg_path), "--out", str(out2)) == 0
    assert (out1 / "manifest.json").read_bytes() == (out2 / "manifest.json").read_bytes()
    assert (out1 / "trajectory.csv").read_bytes() == (out2 / "trajectory.csv").read_bytes()


def test_cli_landscape_flat_for_identical_references(tmp_path):
    ref = tmp_path / "ref.csv"
    io.write_field_csv(ref, np.full(128, 0.5), 16, 8)
    cfg = {
        "problem": {"name": "mbb", "nx": 16, "ny": 8, "v0": 0.5},
        "reparams": [{"kind": "direct"}],
        "rho_ref_1": str(ref),
        "rho_ref_2": str(ref),
        "n_alpha": 7,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "land"
    assert run_cli("landscape", "--config", str(cfg_path), "--out", str(out)) == 0
    rows = (out / "landscape_direct.csv").read_text().strip().splitlines()[1:]
    objectives = [float(r.split(",")[1]) for r in rows]
    assert len(objectives) == 7
    assert max(objectives) - min(objectives) < 1e-10 * max(objectives)


def test_cli_landscape_missing_reference_fails(tmp_path):
    cfg = {
        "problem": {"name": "mbb", "nx": 16, "ny": 8, "v0": 0.5},
        "rho_ref_1": "uniform",
        "rho_ref_2": str(tmp_path / "missing.csv"),
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run_cli("landscape", "--config", str(cfg_path), "--out", str(tmp_path / "o")) == 2


def test_cli_trajectory_metrics(tmp_path):
    out = tmp_path / "run"
    assert run_cli("optimize", "--preset", "twobar-siren-fast", "--out", str(out)) == 0
    metrics_out = tmp_path / "tm"
    assert run_cli("trajectory", "--run", str(out), "--out", str(metrics_out)) == 0
    lines = (metrics_out / "trajectory_metrics.csv").read_text().strip().splitlines()
    assert lines[0] == "iteration,grad_norm,grad_angle_rad"
    assert len(lines) == 22  # header + budget 20 + initial evaluation


def test_cli_profile_single_run_is_unity(tmp_path):
    out = tmp_path / "run"
    assert run_cli("optimize", "--preset", "twobar-baseline", "--out", str(out)) == 0
    prof = tmp_path / "prof"
    assert run_cli("profile", "--runs", str(out), "--metric", "best_objective", "--out", str(prof)) == 0
    lines = (prof / "profile.csv").read_text().strip().splitlines()
    values = [float(r.split(",")[1]) for r in lines[1:]]
    assert all(v == 1.0 for v in values)


def test_cli_search_single_trial_grid(tmp_path):
    cfg = {
        "base": {
            "problem": {"name": "twobar"},
            "reparam": {"kind": "direct"},
            "optimizer": {"kind": "mma", "move_limit": 2.0, "asyinit": 0.1, "c_const": 3.0},
        },
        "search": {"mode": "grid", "parameters": {"move_limit": [2.0]}, "budget": 40},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "search"
    assert run_cli("search", "--config", str(cfg_path), "--out", str(out)) == 0
    best = json.loads((out / "best.json").read_text())
    assert best == {"move_limit": 2.0}


def test_cli_search_skips_failing_trial(tmp_path):
    cfg = {
        "base": {
            "problem": {"name": "twobar"},
            "reparam": {"kind": "direct"},
            "optimizer": {"kind": "mma", "move_limit": 2.0, "asyinit": 0.1, "c_const": 3.0},
        },
        # move_limit <= 0 is rejected by the optimizer config: that trial fails
        "search": {"mode": "grid", "parameters": {"move_limit": [-1.0, 2.0]}, "budget": 30},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "search"
    assert run_cli("search", "--config", str(cfg_path), "--out", str(out)) == 0
    best = json.loads((out / "best.json").read_text())
    assert best == {"move_limit": 2.0}
    trials = (out / "trials.csv").read_text()
    assert "failed" in trials


def test_cli_threshold_command(tmp_path):
    rng = np.random.default_rng(3)
    design = tmp_path / "design.csv"
    io.write_field_csv(design, rng.uniform(0, 1, 128), 16, 8)
    out = tmp_path / "thr"
    assert (
        run_cli(
            "threshold",
            "--design",
            str(design),
            "--problem",
            "mbb",
            "--v0",
            "0.5",
            "--out",
            str(out),
        )
        == 0
    )
    result = json.loads((out / "threshold.json").read_text())
    assert result["thresholded_objective_rescaled"] == pytest.approx(
        result["thresholded_objective"] * result["thresholded_volume"] / 0.5
    )


def test_density_field_validation():
    with pytest.raises(ValueError):
        DensityField(np.array([0.5, 1.5]), 2, 1)
    with pytest.raises(ValueError):
        DensityField(np.zeros(3), 2, 2)
