import csv
import json

import numpy as np
import pytest

from ergosafe.cli import EXIT_OK, EXIT_SPEC, EXIT_USAGE, TRIAL_FIELDS, main, read_trajectories, write_trajectories
from ergosafe.core import Trajectory
from ergosafe.scenario import dumps_scenario, scenario_from_dict

SMALL = {
    "name": "small",
    "workspace": [1.0, 1.0],
    "robots": [{"start": [0.1, 0.1], "goal": [0.9, 0.9]}],
    "obstacles": [{"center": [0.5, 0.5], "scale": [0.12, 0.12], "buffer": 0.02}],
    "gamma": 0.3,
    "T": 30,
    "modes_per_dim": 5,
    "u_max": 0.5,
}


def write_scene(tmp_path, **kw):
    d = dict(SMALL, **kw)
    path = tmp_path / "scene.json"
    path.write_text(dumps_scenario(scenario_from_dict(d)))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_trajectory_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    trajs = [Trajectory(rng.random((12, 2)), rng.standard_normal((11, 2)), 0.1) for _ in range(3)]
    path = tmp_path / "t.csv"
    write_trajectories(path, trajs)
    back = read_trajectories(path)
    assert sorted(back) == [0, 1, 2]
    for r, t in enumerate(trajs):
        np.testing.assert_allclose(back[r].states, t.states, rtol=0, atol=1e-12)
        np.testing.assert_allclose(back[r].controls, t.controls, rtol=0, atol=1e-12)
        assert back[r].dt == pytest.approx(0.1, abs=1e-12)


@pytest.mark.parametrize("mode", ["sc_eto", "eto_plain_h", "none"])
def test_plan_writes_outputs(tmp_path, mode):
    out = tmp_path / "out"
    assert main(["plan", "--scenario", write_scene(tmp_path), "--out", str(out), "--mode", mode]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["mode"] == mode
    assert report["scenario"] == "small"
    assert {"audit", "min_h", "in_safe_set", "ergodic_metric"} <= set(report)
    traj = read_trajectories(out / "trajectory.csv")[0]
    assert traj.T == 30
    np.testing.assert_allclose(traj.states[0], [0.1, 0.1])
    coverage = read_csv(out / "coverage.csv")
    assert len(coverage) == 25
    assert list(coverage[0]) == ["k0", "k1", "c_k", "phi_k", "abs_diff", "weight"]
    if mode == "sc_eto" and report["converged"]:
        assert report["audit"]["passed"] and report["in_safe_set"]


def test_plan_rejects_multi_robot_scene(tmp_path, capsys):
    scene = write_scene(tmp_path, robots=SMALL["robots"] + [{"start": [0.9, 0.1], "goal": [0.1, 0.9]}])
    assert main(["plan", "--scenario", scene, "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "fleet" in capsys.readouterr().err


def test_unsafe_start_exits_with_spec_error(tmp_path, capsys):
    scene = write_scene(tmp_path, robots=[{"start": [0.5, 0.5], "goal": [0.9, 0.9]}])
    assert main(["plan", "--scenario", scene, "--out", str(tmp_path / "o")]) == EXIT_SPEC
    assert "obs0" in capsys.readouterr().err


def test_broken_json_reports_position(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"workspace": [1, 1], "robots": [}')
    assert main(["plan", "--scenario", str(path), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "broken.json:1:" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["plan", "--scenario", "default"],
        ["plan", "--scenario", "default", "--out", "x", "--mode", "soft"],
        ["montecarlo", "--scenario", "default", "--out", "x", "--trials", "0"],
        ["ablate", "--scenario", "default", "--out", "x", "--gammas", "0,0.5"],
        ["ablate", "--scenario", "default", "--out", "x", "--gammas", "a,b"],
        ["grad-check", "--scenario", "default", "--modes-per-dim", "0"],
    ],
)
def test_usage_errors(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "montecarlo" in capsys.readouterr().out


def test_grad_check(tmp_path, capsys):
    assert main(["grad-check", "--scenario", write_scene(tmp_path)]) == EXIT_OK
    err = float(capsys.readouterr().out.split(":")[1])
    assert err < 1e-4


def test_ablate_writes_one_row_per_gamma(tmp_path):
    out = tmp_path / "out"
    assert main(["ablate", "--scenario", write_scene(tmp_path), "--out", str(out), "--gammas", "0.2,0.6,1"]) == EXIT_OK
    rows = read_csv(out / "gamma_sweep.csv")
    assert [float(r["gamma"]) for r in rows] == [0.2, 0.6, 1.0]
    assert list(rows[0]) == ["gamma", "metric", "min_h", "converged"]
    for g in ("0.2", "0.6", "1"):
        assert (out / f"trajectory_gamma_{g}.csv").exists()


def test_montecarlo_is_deterministic(tmp_path):
    scene = write_scene(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["montecarlo", "--scenario", scene, "--out", str(a), "--trials", "2", "--seed", "3"]) == EXIT_OK
    assert main(["montecarlo", "--scenario", scene, "--out", str(b), "--trials", "2", "--seed", "3"]) == EXIT_OK
    assert (a / "trials.csv").read_bytes() == (b / "trials.csv").read_bytes()
    rows = read_csv(a / "trials.csv")
    assert list(rows[0]) == TRIAL_FIELDS
    assert [r["mode"] for r in rows] == ["sc_eto", "eto_plain_h"] * 2
    for r in rows:
        assert r["collided"] == str(int(float(r["min_h"]) < 0))
    summary = read_csv(a / "summary.csv")
    assert [r["mode"] for r in summary] == ["sc_eto", "eto_plain_h"]


def test_fleet_command(tmp_path):
    robots = [{"start": [0.1, 0.1], "goal": [0.9, 0.9]}, {"start": [0.9, 0.9], "goal": [0.1, 0.1]}]
    scene = write_scene(tmp_path, robots=robots, obstacles=[], d_min=0.15)
    out = tmp_path / "out"
    assert main(["fleet", "--scenario", scene, "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["pairs"] == 1 and len(report["robots"]) == 2
    back = read_trajectories(out / "trajectory.csv")
    assert sorted(back) == [0, 1]
    if report["converged"]:
        assert report["min_pair_distance"] >= 0.15 - 1e-6
