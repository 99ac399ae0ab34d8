"""Closed-loop tracking, Monte-Carlo safety study and gamma ablation.

Plans are executed by a PID waypoint tracker on the single integrator with
bounded uniform actuation noise, which stands in for a full physics
simulator. A trial collides when the executed path enters any planning
barrier (``h < 0``).
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import Dynamics, Trajectory
from .optimizer import ProblemSpec, Solution, SolverConfig, solve
from .safety import DcbfConstraint

logger = logging.getLogger(__name__)

MC_MODES = {"sc_eto": "dcbf", "eto_plain_h": "plain_h"}
SAMPLING_MARGIN = 0.05
MAX_REJECTIONS = 10_000


@dataclass(frozen=True)
class TrackerConfig:
    kp: float = 5.0
    ki: float = 0.1
    kd: float = 0.5
    # weight on the plan's own velocity over the current interval (feedforward)
    kv: float = 1.0
    noise: float = 0.05
    substeps: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd, self.kv) < 0:
            raise ValueError("PID gains must be non-negative")
        if self.noise < 0:
            raise ValueError("noise bound must be non-negative")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


def track(plan: Trajectory, dynamics: Dynamics, tc: TrackerConfig) -> Trajectory:
    """Follow ``plan`` waypoint by waypoint with a PID velocity command.

    Within plan interval ``t`` the position reference moves linearly from
    waypoint ``t`` to waypoint ``t + 1``. The velocity command is ``kv``
    times the planned interval velocity plus PID feedback on the position
    error; with ``kv = 1`` and no noise the robot reproduces the plan
    exactly. The controller runs ``tc.substeps`` times per interval; each
    substep adds noise drawn uniformly from ``[-tc.noise, tc.noise]`` per
    axis to the commanded velocity. Commands are not saturated. The
    returned trajectory has ``(T - 1) * substeps + 1`` states at spacing
    ``dt / substeps``; the states at plan times are
    ``executed.states[::substeps]``.
    """
    rng = np.random.default_rng(tc.seed)
    S = tc.substeps
    h = plan.dt / S
    x = plan.states[0].copy()
    integral = np.zeros_like(x)
    e_prev = np.zeros_like(x)
    states = [x.copy()]
    controls = []
    for t in range(plan.T - 1):
        a, b = plan.states[t], plan.states[t + 1]
        ff = tc.kv * (b - a) / plan.dt
        for j in range(S):
            e = a + (j / S) * (b - a) - x
            integral += e * h
            u = ff + tc.kp * e + tc.ki * integral + tc.kd * (e - e_prev) / h
            e_prev = e
            applied = u + rng.uniform(-tc.noise, tc.noise, size=u.shape) if tc.noise > 0 else u
            x = dynamics.step(x, applied, h)
            states.append(x.copy())
            controls.append(applied)
    return Trajectory(np.array(states), np.array(controls), h)


@dataclass
class TrialResult:
    trial: int
    mode: str
    start: np.ndarray
    goal: np.ndarray
    converged: bool
    collided: bool
    min_h: float
    planned_min_h: float
    tracking_rms: float
    ergodic_metric: float
    first_violation: Dict[str, Optional[float]] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.converged and not self.collided


def _executed_audit(constraints: Sequence[DcbfConstraint], executed: Trajectory, dynamics: Dynamics):
    pts = dynamics.project(executed.states)
    min_h = np.inf
    first: Dict[str, Optional[float]] = {}
    for c in constraints:
        h = c.h(pts)
        min_h = min(min_h, float(h.min()))
        bad = np.flatnonzero(h < 0.0)
        first[c.label] = float(bad[0] * executed.dt) if bad.size else None
    return min_h, first


def evaluate_plan(solution: Solution, spec: ProblemSpec, tc: TrackerConfig, trial: int = 0) -> TrialResult:
    plan = solution.trajectory
    executed = track(plan, spec.dynamics, tc)
    min_h, first = _executed_audit(spec.constraints, executed, spec.dynamics)
    at_plan = executed.states[:: tc.substeps]
    rms = float(np.sqrt(np.mean(np.sum((at_plan - plan.states) ** 2, axis=1))))
    planned = solution.safety.min_h if solution.safety is not None else np.inf
    return TrialResult(
        trial=trial,
        mode=spec.mode,
        start=spec.start,
        goal=spec.goal,
        converged=solution.converged,
        collided=bool(min_h < 0.0),
        min_h=min_h,
        planned_min_h=planned,
        tracking_rms=rms,
        ergodic_metric=solution.ergodic_metric,
        first_violation=first,
    )


def trial_seed(master: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(trial)])


def sample_safe_point(spec: ProblemSpec, rng: np.random.Generator, margin: float = SAMPLING_MARGIN) -> np.ndarray:
    """Uniform sample from the workspace with ``h >= margin`` for every obstacle barrier."""
    L = spec.workspace.extents
    obstacles = [c for c in spec.constraints if not c.pairwise]
    for _ in range(MAX_REJECTIONS):
        w = rng.uniform(0.0, L)
        if all(float(c.barrier.value(w)) >= margin for c in obstacles):
            return w
    raise RuntimeError(f"no safe point found in {MAX_REJECTIONS} draws; the scene is over-constrained")


@dataclass
class MonteCarloResult:
    trials: List[TrialResult]
    modes: Sequence[str]

    def success_rate(self, mode: str) -> float:
        rows = [r for r in self.trials if r.mode == mode]
        return 100.0 * sum(r.success for r in rows) / len(rows) if rows else float("nan")

    def converged_success_rate(self, mode: str) -> float:
        rows = [r for r in self.trials if r.mode == mode and r.converged]
        return 100.0 * sum(r.success for r in rows) / len(rows) if rows else float("nan")

    def summary(self) -> List[dict]:
        out = []
        for name in self.modes:
            rows = [r for r in self.trials if r.mode == name]
            out.append(
                {
                    "mode": name,
                    "trials": len(rows),
                    "converged": sum(r.converged for r in rows),
                    "collisions": sum(r.collided for r in rows),
                    "success_pct": self.success_rate(name),
                    "converged_success_pct": self.converged_success_rate(name),
                }
            )
        return out


def _run_trial(args):
    spec, trial, modes, tc, cfg, master = args
    ss = trial_seed(master, trial)
    sample_ss, solver_ss, track_ss = ss.spawn(3)
    rng = np.random.default_rng(sample_ss)
    start = sample_safe_point(spec, rng)
    goal = sample_safe_point(spec, rng)
    solver_seed = int(solver_ss.generate_state(1)[0])
    track_seed = int(track_ss.generate_state(1)[0])
    results = []
    for name in modes:
        sub = replace(spec, start=start, goal=goal, mode=MC_MODES[name])
        sol = solve(sub, replace(cfg, seed=solver_seed))
        res = evaluate_plan(sol, sub, replace(tc, seed=track_seed), trial)
        res.mode = name
        results.append(res)
    return results


def worker_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("ERGOSAFE_THREADS")
    if env:
        return max(1, int(env))
    return 1


def run_monte_carlo(
    spec: ProblemSpec,
    n_trials: int,
    modes: Sequence[str] = ("sc_eto", "eto_plain_h"),
    tc: Optional[TrackerConfig] = None,
    seed: int = 0,
    cfg: Optional[SolverConfig] = None,
    workers: Optional[int] = None,
) -> MonteCarloResult:
    """Random start/goal pairs, each planned in every mode, tracked and audited.

    Trial ``i`` draws everything from ``SeedSequence([seed, i])``, so the
    result does not depend on ``workers``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    unknown = set(modes) - set(MC_MODES)
    if unknown:
        raise ValueError(f"unknown Monte-Carlo modes {sorted(unknown)}")
    tc = tc or TrackerConfig()
    cfg = cfg or SolverConfig()
    jobs = [(spec, i, tuple(modes), tc, cfg, seed) for i in range(n_trials)]
    n_workers = min(worker_count(workers), n_trials)
    if n_workers == 1:
        batches = [_run_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            batches = list(pool.map(_run_trial, jobs))
    trials = [r for batch in batches for r in batch]
    return MonteCarloResult(trials, tuple(modes))


@dataclass
class AblationResult:
    gammas: List[float]
    solutions: List[Solution]

    @property
    def metrics(self) -> np.ndarray:
        return np.array([s.ergodic_metric for s in self.solutions])

    @property
    def min_h(self) -> np.ndarray:
        return np.array([s.safety.min_h if s.safety else np.inf for s in self.solutions])

    @property
    def converged(self) -> np.ndarray:
        return np.array([s.converged for s in self.solutions])

    def rows(self) -> List[dict]:
        return [
            {"gamma": g, "metric": s.ergodic_metric, "min_h": s.safety.min_h if s.safety else float("inf"), "converged": s.converged}
            for g, s in zip(self.gammas, self.solutions)
        ]


def _better(a: Solution, b: Optional[Solution]) -> Solution:
    if b is None or (a.converged and not b.converged):
        return a
    if b.converged and not a.converged:
        return b
    return a if a.objective <= b.objective else b


def run_gamma_ablation(
    spec: ProblemSpec,
    gammas: Sequence[float],
    cfg: Optional[SolverConfig] = None,
    continuation: bool = True,
) -> AblationResult:
    """One SC-ETO solve per gamma, all from the same initialization and seed.

    Any DCBF-feasible plan for a gamma stays feasible for every larger gamma,
    so with ``continuation`` each gamma (taken in increasing order) is also
    solved from the best plan of the next smaller gamma and the better
    converged result is kept. This only adds a second starting point; it
    stops a nonconvex solve from landing in a worse local minimum than a
    point it could have started from.
    """
    gammas = [float(g) for g in gammas]
    bad = [g for g in gammas if not (0.0 < g <= 1.0)]
    if bad:
        raise ValueError(f"gamma values must lie in (0, 1], got {bad}")
    cfg = cfg or SolverConfig()
    base = spec.with_mode("dcbf")
    best: Dict[float, Solution] = {}
    prev: Optional[Solution] = None
    for g in sorted(set(gammas)):
        sub = base.with_gamma(g)
        sol = solve(sub, cfg)
        if continuation and prev is not None and prev.converged:
            sol = _better(sol, solve(sub, cfg, init=prev.trajectory.controls))
        logger.info("gamma=%.3f metric=%.6g converged=%s", g, sol.ergodic_metric, sol.converged)
        best[g] = prev = sol
    return AblationResult(gammas, [best[g] for g in gammas])


def trend_inversions(values: Sequence[float]) -> List[float]:
    """Relative sizes of the increases in a sequence that should be non-increasing."""
    v = np.asarray(values, dtype=float)
    out = []
    for a, b in zip(v[:-1], v[1:]):
        if b > a:
            out.append(float((b - a) / max(abs(a), 1e-300)))
    return out


def default_gammas(n: int = 10) -> List[float]:
    return [round(x, 10) for x in np.linspace(0.1, 1.0, n)]
