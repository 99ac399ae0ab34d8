import numpy as np
import pytest

from ergosafe.core import Trajectory, Workspace, single_integrator
from ergosafe.ergodic import ErgodicObjective
from ergosafe.harness import (
    AblationResult,
    TrackerConfig,
    default_gammas,
    evaluate_plan,
    run_gamma_ablation,
    run_monte_carlo,
    sample_safe_point,
    track,
    trend_inversions,
    worker_count,
)
from ergosafe.optimizer import ProblemSpec, SolverConfig, solve
from ergosafe.safety import DcbfConstraint, Superellipsoid
from ergosafe.spectral import FourierBasis, SpatialMeasure

UNIT = Workspace((1.0, 1.0))
DYN = single_integrator(2)


def small_spec(constraints=(), mode="dcbf", T=40, start=(0.1, 0.1), goal=(0.9, 0.9)):
    obj = ErgodicObjective.from_measure(FourierBasis(UNIT, 6), SpatialMeasure.uniform())
    return ProblemSpec(single_integrator(2, 0.5), UNIT, obj, start, goal, constraints, mode, T, 0.1)


ROCK = DcbfConstraint(Superellipsoid((0.5, 0.5), (0.12, 0.12), 0.02, 1.0, 2, "rock"), 0.3)


def zigzag(T=30, dt=0.1, seed=0):
    rng = np.random.default_rng(seed)
    states = np.cumsum(np.vstack([[0.5, 0.5], rng.uniform(-0.02, 0.02, (T - 1, 2))]), axis=0)
    return Trajectory(states, np.diff(states, axis=0) / dt, dt)


# --- tracker ------------------------------------------------------------


def test_tracker_rejects_bad_config():
    with pytest.raises(ValueError):
        TrackerConfig(kp=-1.0)
    with pytest.raises(ValueError):
        TrackerConfig(kv=-0.5)
    with pytest.raises(ValueError):
        TrackerConfig(noise=-0.1)
    with pytest.raises(ValueError):
        TrackerConfig(substeps=0)


@pytest.mark.parametrize("kp", [10.0, 50.0])
def test_stiff_feedback_tracks_without_noise(kp):
    plan = zigzag()
    tc = TrackerConfig(kp=kp, ki=0.0, kd=0.0, noise=0.0)
    executed = track(plan, DYN, tc)
    assert executed.states.shape == ((plan.T - 1) * tc.substeps + 1, 2)
    assert np.max(np.abs(executed.states[:: tc.substeps] - plan.states)) < 1e-2


@pytest.mark.parametrize("kp", [10.0, 50.0])
def test_pure_proportional_lag_bound(kp):
    # without feedforward a P loop lags a ramp by at most speed / kp
    plan = zigzag()
    tc = TrackerConfig(kp=kp, ki=0.0, kd=0.0, kv=0.0, noise=0.0)
    executed = track(plan, DYN, tc)
    speed = np.max(np.abs(plan.controls))
    assert np.max(np.abs(executed.states[:: tc.substeps] - plan.states)) <= speed / kp


def test_feedforward_alone_reproduces_plan():
    plan = zigzag()
    tc = TrackerConfig(kp=0.0, ki=0.0, kd=0.0, kv=1.0, noise=0.0)
    executed = track(plan, DYN, tc)
    np.testing.assert_allclose(executed.states[:: tc.substeps], plan.states, atol=1e-12)


def test_zero_gains_never_move():
    plan = zigzag()
    tc = TrackerConfig(kp=0.0, ki=0.0, kd=0.0, kv=0.0, noise=0.0)
    executed = track(plan, DYN, tc)
    assert np.all(executed.states == plan.states[0])


def test_noise_is_seeded():
    plan = zigzag()
    a = track(plan, DYN, TrackerConfig(seed=3))
    b = track(plan, DYN, TrackerConfig(seed=3))
    c = track(plan, DYN, TrackerConfig(seed=4))
    np.testing.assert_array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_noise_stays_within_bound():
    plan = zigzag()
    noisy = track(plan, DYN, TrackerConfig(noise=0.05, seed=1))
    clean = track(plan, DYN, TrackerConfig(noise=0.0))
    # the first substep of each run applies the same command plus noise
    first = noisy.controls[0] - clean.controls[0]
    assert np.all(np.abs(first) <= 0.05)


# --- trial evaluation ---------------------------------------------------


@pytest.fixture(scope="module")
def rock_plan():
    spec = small_spec([ROCK])
    return spec, solve(spec, SolverConfig(seed=0))


def test_perfect_tracking_of_converged_plan_succeeds(rock_plan):
    spec, sol = rock_plan
    assert sol.converged
    res = evaluate_plan(sol, spec, TrackerConfig(kv=1.0, noise=0.0, substeps=1))
    assert res.success and not res.collided
    assert res.tracking_rms < 1e-12
    assert res.min_h == pytest.approx(sol.safety.min_h, abs=1e-12)


def test_collision_flag_matches_min_h(rock_plan):
    spec, sol = rock_plan
    for seed in range(5):
        res = evaluate_plan(sol, spec, TrackerConfig(noise=0.5, seed=seed), trial=seed)
        assert res.collided == (res.min_h < 0)
        assert res.success == (res.converged and not res.collided)
        if res.collided:
            assert res.first_violation["rock"] is not None


def test_sample_safe_point_respects_margin(rng):
    spec = small_spec([ROCK])
    for _ in range(50):
        w = sample_safe_point(spec, rng, margin=0.1)
        assert ROCK.barrier.value(w) >= 0.1
        assert np.all((w >= 0) & (w <= 1))


def test_sample_safe_point_gives_up_on_blocked_workspace(rng):
    wall = DcbfConstraint(Superellipsoid((0.5, 0.5), (0.1, 0.1), 0.0, 1.0, 2, "wall"), 0.3)
    spec = small_spec([wall])
    with pytest.raises(RuntimeError, match="over-constrained"):
        sample_safe_point(spec, rng, margin=1e6)


# --- Monte Carlo --------------------------------------------------------


def test_monte_carlo_is_reproducible_and_counts_modes():
    spec = small_spec([ROCK], T=30)
    a = run_monte_carlo(spec, 2, seed=5)
    b = run_monte_carlo(spec, 2, seed=5)
    assert [(r.trial, r.mode) for r in a.trials] == [(0, "sc_eto"), (0, "eto_plain_h"), (1, "sc_eto"), (1, "eto_plain_h")]
    for x, y in zip(a.trials, b.trials):
        np.testing.assert_array_equal(x.start, y.start)
        assert x.min_h == y.min_h and x.ergodic_metric == y.ergodic_metric
    summary = {row["mode"]: row for row in a.summary()}
    assert summary["sc_eto"]["trials"] == 2
    # both modes of a trial share the start/goal pair
    np.testing.assert_array_equal(a.trials[0].start, a.trials[1].start)


def test_monte_carlo_rejects_bad_arguments():
    spec = small_spec([ROCK], T=30)
    with pytest.raises(ValueError):
        run_monte_carlo(spec, 0)
    with pytest.raises(ValueError, match="unknown"):
        run_monte_carlo(spec, 1, modes=("sc_eto", "soft"))


def test_worker_count(monkeypatch):
    monkeypatch.delenv("ERGOSAFE_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("ERGOSAFE_THREADS", "3")
    assert worker_count() == 3
    assert worker_count(0) == 1


# --- gamma ablation -----------------------------------------------------


def test_ablation_rejects_gamma_outside_unit_interval():
    spec = small_spec([ROCK])
    for bad in ([0.0, 0.5], [0.5, 1.5], [-0.1]):
        with pytest.raises(ValueError, match="gamma"):
            run_gamma_ablation(spec, bad)


def test_ablation_keeps_requested_order():
    spec = small_spec([ROCK], T=30)
    res = run_gamma_ablation(spec, [0.9, 0.3])
    assert isinstance(res, AblationResult)
    assert res.gammas == [0.9, 0.3]
    assert [s.trajectory.T for s in res.solutions] == [30, 30]
    assert [row["gamma"] for row in res.rows()] == [0.9, 0.3]
    # a looser decay rate can only enlarge the feasible set
    assert res.metrics[0] <= res.metrics[1] + 1e-8


def test_trend_inversions():
    assert trend_inversions([3.0, 2.0, 2.0, 1.0]) == []
    assert trend_inversions([2.0, 1.0, 1.1, 0.5]) == [pytest.approx(0.1)]


def test_default_gammas():
    g = default_gammas()
    assert len(g) == 10 and g[0] == 0.1 and g[-1] == 1.0
