import json
from pathlib import Path

import numpy as np
import pytest

from kooplift.cli import main
from kooplift.data import load_trajectories
from kooplift.identify import embed_state, load_model


def write_config(path: Path, cfg: dict) -> str:
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture()
def collected(tmp_path):
    cfg = write_config(
        tmp_path / "collect.json",
        {
            "system.name": "cubic",
            "system.dt": 0.01,
            "collect.n_traj": 3,
            "collect.duration": 0.2,
            "collect.input": "uniform",
            "collect.init": "box",
            "seed": 0,
        },
    )
    out = tmp_path / "data"
    assert main(["collect", "--config", cfg, "--out", str(out)]) == 0
    return cfg, out


def test_collect_writes_per_trajectory_files(collected, tmp_path):
    _, out = collected
    files = sorted(out.glob("traj_*.csv"))
    assert len(files) == 3
    # 20 steps -> 21 state rows per trajectory, plus the header line
    for f in files:
        assert len(f.read_text().splitlines()) == 22
    trajs = load_trajectories(files[0])
    assert trajs[0].states.shape == (21, 1)


def test_collect_rerun_is_byte_identical(collected, tmp_path):
    cfg, out = collected
    out2 = tmp_path / "data2"
    assert main(["collect", "--config", cfg, "--out", str(out2)]) == 0
    for f in sorted(out.glob("*.csv")):
        assert f.read_bytes() == (out2 / f.name).read_bytes()


def test_collect_zero_trajectories_errors(tmp_path):
    cfg = write_config(tmp_path / "bad.json", {"collect.n_traj": 0, "collect.duration": 0.1})
    assert main(["collect", "--config", cfg, "--out", str(tmp_path / "x")]) == 1


def test_fit_control_forecast_pipeline(collected, tmp_path):
    cfg_path, data_dir = collected
    fit_cfg = write_config(
        tmp_path / "fit.json",
        {
            "data.path": str(data_dir),
            "fit.m": 12,
            "fit.gamma": 1e-6,
            "fit.lifting": "nystrom",
            "fit.strategy": "shared-uniform",
            "seed": 1,
        },
    )
    fit_out = tmp_path / "fit"
    assert main(["fit", "--config", fit_cfg, "--out", str(fit_out)]) == 0
    model_path = fit_out / "model.json"
    report = json.loads((fit_out / "fit_report.json").read_text())
    assert report["gamma"] == 1e-6 and report["m"] == 12
    assert "cond_gram_out" in report["diagnostics"]
    model = load_model(model_path)
    np.testing.assert_array_equal(
        embed_state(model, [0.4]), embed_state(load_model(model_path), [0.4])
    )

    ctl_cfg = write_config(
        tmp_path / "ctl.json",
        {
            "system.name": "cubic",
            "model.path": str(model_path),
            "control.x0": [0.9],
            "control.steps": 300,
            "control.stop_norm": 1e-6,
        },
    )
    ctl_out = tmp_path / "ctl"
    assert main(["control", "--config", ctl_cfg, "--out", str(ctl_out)]) == 0
    metrics = json.loads((ctl_out / "metrics.json").read_text())
    assert metrics["total_cost"] > 0
    assert (ctl_out / "rollout.csv").exists()

    fc_cfg = write_config(
        tmp_path / "fc.json",
        {
            "system.name": "cubic",
            "model.path": str(model_path),
            "forecast.x0": [0.5],
            "forecast.steps": 50,
            "forecast.input": "square",
        },
    )
    fc_out = tmp_path / "fc"
    assert main(["forecast", "--config", fc_cfg, "--out", str(fc_out)]) == 0
    metrics = json.loads((fc_out / "metrics.json").read_text())
    assert np.isfinite(metrics["rmse_pct"])
    assert (fc_out / "truth.csv").exists() and (fc_out / "forecast.csv").exists()


def test_fit_with_cross_validation(collected, tmp_path):
    _, data_dir = collected
    cfg = write_config(
        tmp_path / "cv.json",
        {
            "data.path": str(data_dir),
            "fit.m": 10,
            "fit.cv": True,
            "fit.cv.lengthscales": [0.5, 1.0],
            "fit.cv.gammas": [1e-6, 1e-2],
            "fit.cv.folds": 3,
            "seed": 2,
        },
    )
    out = tmp_path / "cv_out"
    assert main(["fit", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads((out / "fit_report.json").read_text())
    assert "cv" in report
    assert report["cv"]["best_gamma"] in (1e-6, 1e-2)
    assert len(report["cv"]["scores"]) == 4


def test_study_bounds_rows_ordered(tmp_path):
    cfg = write_config(
        tmp_path / "b.json",
        {"bounds.n": 100, "bounds.m_list": [5, 10], "bounds.seeds": 2, "fit.gamma": 1e-4},
    )
    out = tmp_path / "bounds"
    assert main(["study-bounds", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "bounds.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert "gap_bound" in header and "empirical_gap" in header
    ms = [int(line.split(",")[0]) for line in lines[1:]]
    assert ms == sorted(ms)
    assert len(lines) == 1 + 2 * 2


def test_bench_smoke(tmp_path):
    cfg = write_config(
        tmp_path / "bench.json",
        {"bench.scenario": "cubic-rmse", "bench.seeds": 2, "fit.m": 20},
    )
    out = tmp_path / "bench"
    assert main(["bench", "--config", cfg, "--out", str(out)]) == 0
    doc = json.loads((out / "bench_cubic-rmse.json").read_text())
    assert "median_rmse_u_pct" in doc and len(doc["rmse_u_pct"]) == 2


def test_override_and_seed_flags(tmp_path):
    cfg = write_config(tmp_path / "o.json", {"collect.n_traj": 1, "collect.duration": 0.1})
    out = tmp_path / "o1"
    rc = main(
        [
            "collect",
            "--config",
            cfg,
            "--out",
            str(out),
            "--override",
            "collect.n_traj=2",
            "--seed",
            "5",
        ]
    )
    assert rc == 0
    assert len(list(out.glob("traj_*.csv"))) == 2


def test_unknown_system_errors(tmp_path):
    cfg = write_config(tmp_path / "u.json", {"system.name": "pendulum"})
    assert main(["collect", "--config", cfg, "--out", str(tmp_path / "x")]) == 1


def test_json17_round_trip(tmp_path):
    from kooplift.cli import _json17

    doc = {"a": 0.1 + 0.2, "b": [1e-300, 3.141592653589793], "c": {"d": True, "e": None}}
    text = _json17(doc)
    back = json.loads(text)
    assert back["a"] == doc["a"]
    assert back["b"][0] == doc["b"][0] and back["b"][1] == doc["b"][1]
