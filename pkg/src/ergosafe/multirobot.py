"""Joint planning for several robots with inter-robot pairwise barriers.

A fleet is stacked into one :class:`ProblemSpec` whose state is the
concatenation of the robots' states. Coverage is pooled: the trajectory
coefficients average over every robot's visits, so the fleet shares one
target measure. Obstacle barriers are replicated per robot and every
requested pair gets a distance barrier.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag

from .core import Dynamics, Trajectory
from .ergodic import ErgodicObjective
from .optimizer import ProblemSpec, Solution, SolverConfig, SpecError, initialize, solve
from .safety import DcbfConstraint, PairwiseBarrier, audit_points


class StackedStep:
    """Block-diagonal step (or Jacobian) over ``count`` copies of one dynamics.

    A class rather than a closure so stacked dynamics stay picklable.
    """

    def __init__(self, fn, n: int, m: int, count: int, jacobian: bool = False):
        self.fn, self.n, self.m, self.count, self.jacobian = fn, n, m, count, jacobian

    def __call__(self, x, u, dt):
        xs = np.asarray(x).reshape(self.count, self.n)
        us = np.asarray(u).reshape(self.count, self.m)
        if not self.jacobian:
            return np.concatenate([self.fn(xs[r], us[r], dt) for r in range(self.count)])
        blocks = [self.fn(xs[r], us[r], dt) for r in range(self.count)]
        return block_diag(*[a for a, _ in blocks]), block_diag(*[b for _, b in blocks])


def stack_dynamics(dyn: Dynamics, count: int) -> Dynamics:
    if dyn.n_agents != 1:
        raise ValueError("only single-agent dynamics can be stacked")
    n, m = dyn.n, dyn.m
    index = np.stack([dyn.position_index[0] + r * n for r in range(count)])
    jac = None if dyn.jacobian is None else StackedStep(dyn.jacobian, n, m, count, jacobian=True)
    return Dynamics(
        n=n * count,
        m=m * count,
        step=StackedStep(dyn.step, n, m, count),
        position_index=index,
        u_min=np.tile(dyn.u_min, count),
        u_max=np.tile(dyn.u_max, count),
        jacobian=jac,
        single_integrator=dyn.single_integrator,
    )


def full_pairs(n_robots: int) -> List[Tuple[int, int]]:
    return list(itertools.combinations(range(n_robots), 2))


@dataclass(frozen=True, eq=False)
class FleetSpec:
    """Robots sharing one workspace, measure and horizon, plus pairwise barriers.

    ``pairs`` holds :class:`DcbfConstraint` objects over
    :class:`PairwiseBarrier`; use :meth:`connect` to build them.
    """

    robots: Sequence[ProblemSpec]
    pairs: Sequence[DcbfConstraint] = ()

    def __post_init__(self):
        robots = tuple(self.robots)
        pairs = tuple(self.pairs)
        object.__setattr__(self, "robots", robots)
        object.__setattr__(self, "pairs", pairs)
        if not robots:
            raise SpecError("a fleet needs at least one robot")
        first = robots[0]
        for r, spec in enumerate(robots[1:], start=1):
            if spec.T != first.T or spec.dt != first.dt:
                raise SpecError(f"robot {r} has horizon (T={spec.T}, dt={spec.dt}), robot 0 has (T={first.T}, dt={first.dt})")
            if spec.workspace.bounds != first.workspace.bounds:
                raise SpecError(f"robot {r} uses workspace {spec.workspace.bounds}, robot 0 uses {first.workspace.bounds}")
            if spec.mode != first.mode:
                raise SpecError(f"robot {r} uses mode {spec.mode!r}, robot 0 uses {first.mode!r}")
            same_measure = (
                spec.objective.basis.modes_per_dim == first.objective.basis.modes_per_dim
                and np.array_equal(spec.objective.target, first.objective.target)
            )
            if not same_measure:
                raise SpecError(f"robot {r} covers a different target measure than robot 0")
            if spec.dynamics.n != first.dynamics.n or spec.dynamics.m != first.dynamics.m:
                raise SpecError("all robots must share the same dynamics")
        seen = set()
        for c in pairs:
            if not c.pairwise:
                raise SpecError("fleet pairs must be pairwise barriers")
            i, j = c.barrier.i, c.barrier.j
            if not (0 <= i < len(robots) and 0 <= j < len(robots)):
                raise SpecError(f"pair ({i}, {j}) refers to a robot outside 0..{len(robots) - 1}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise SpecError(f"pair {key} listed twice")
            seen.add(key)

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    @classmethod
    def connect(
        cls,
        robots: Sequence[ProblemSpec],
        d_min: float,
        gamma: Optional[float] = None,
        pairs: Optional[Iterable[Tuple[int, int]]] = None,
    ) -> "FleetSpec":
        """Fleet with a distance barrier on each pair (all pairs by default).

        ``gamma`` defaults to the decay rate of the first robot's first
        obstacle constraint, or 0.5 when there are none.
        """
        robots = tuple(robots)
        if gamma is None:
            gamma = robots[0].constraints[0].gamma if robots and robots[0].constraints else 0.5
        pairs = full_pairs(len(robots)) if pairs is None else [tuple(p) for p in pairs]
        cons = [DcbfConstraint(PairwiseBarrier(int(i), int(j), d_min), gamma) for i, j in pairs]
        return cls(robots, cons)


def stack(fleet: FleetSpec) -> ProblemSpec:
    """One joint problem over the concatenated robot states."""
    robots = fleet.robots
    first = robots[0]
    N = len(robots)
    dyn = stack_dynamics(first.dynamics, N)
    obj = ErgodicObjective(
        first.objective.basis,
        first.objective.target,
        position_index=dyn.position_index,
        weight_scale=first.objective.weight_scale,
    )
    constraints = [replace(c, agent=r) for r, spec in enumerate(robots) for c in spec.constraints]
    constraints.extend(fleet.pairs)
    return ProblemSpec(
        dynamics=dyn,
        workspace=first.workspace,
        objective=obj,
        start=np.concatenate([s.start for s in robots]),
        goal=np.concatenate([s.goal for s in robots]),
        constraints=constraints,
        mode=first.mode,
        T=first.T,
        dt=first.dt,
        R=block_diag(*[s.R for s in robots]),
    )


def split_trajectory(traj: Trajectory, n_robots: int) -> List[Trajectory]:
    n = traj.states.shape[1] // n_robots
    m = traj.controls.shape[1] // n_robots
    return [
        Trajectory(traj.states[:, r * n : (r + 1) * n], traj.controls[:, r * m : (r + 1) * m], traj.dt)
        for r in range(n_robots)
    ]


def min_pair_distance(fleet: FleetSpec, traj: Trajectory) -> float:
    """Smallest distance between any two robots at any time step."""
    pts = stack(fleet).dynamics.project(traj.states)
    best = np.inf
    for i, j in full_pairs(fleet.n_robots):
        d = np.linalg.norm(pts[:, i] - pts[:, j], axis=-1)
        best = min(best, float(d.min()))
    return best


@dataclass
class FleetSolution:
    joint: Solution
    robots: List[Solution]
    stacked: ProblemSpec

    def __len__(self) -> int:
        return len(self.robots)

    def __iter__(self):
        return iter(self.robots)

    def __getitem__(self, r: int) -> Solution:
        return self.robots[r]


def fleet_initialization(fleet: FleetSpec, cfg: SolverConfig) -> np.ndarray:
    """Per-robot default initializations side by side.

    Each robot's block depends only on its own spec, so relabeling the
    robots permutes the initialization the same way.
    """
    return np.concatenate([initialize(s, cfg) for s in fleet.robots], axis=1)


def canonical_order(fleet: FleetSpec) -> List[int]:
    """Robot indices sorted by (start, goal), ties kept in input order."""
    key = lambda r: (tuple(fleet.robots[r].start), tuple(fleet.robots[r].goal))
    return sorted(range(fleet.n_robots), key=key)


def relabel(fleet: FleetSpec, order: Sequence[int]) -> FleetSpec:
    """Fleet whose robot ``k`` is ``fleet.robots[order[k]]``, pairs renumbered and sorted."""
    new_index = {old: new for new, old in enumerate(order)}
    pairs = []
    for c in fleet.pairs:
        i, j = sorted((new_index[c.barrier.i], new_index[c.barrier.j]))
        pairs.append(replace(c, barrier=replace(c.barrier, i=i, j=j)))
    pairs.sort(key=lambda c: (c.barrier.i, c.barrier.j))
    return FleetSpec([fleet.robots[r] for r in order], pairs)


def solve_fleet(fleet: FleetSpec, cfg: Optional[SolverConfig] = None, init: Optional[np.ndarray] = None) -> FleetSolution:
    """Solve the stacked problem and split it back into per-robot solutions.

    Robots are solved in a canonical order (sorted by start, then goal) and
    mapped back, so relabeling the robots permutes the solutions exactly;
    floating-point summation order would otherwise make the results differ
    in the last bits and the optimizer can amplify that. ``init`` (stacked
    controls in the caller's robot order) replaces the default
    initialization.

    Per-robot solutions carry their own trajectory, metric, control cost and
    obstacle audit; convergence, iteration counts and timing are the joint
    run's. The joint solution's audit also covers the pairwise barriers.
    """
    cfg = cfg or SolverConfig()
    order = canonical_order(fleet)
    canon = relabel(fleet, order)
    joint_spec = stack(canon)
    m = fleet.robots[0].dynamics.m
    if init is None:
        u0, warm = fleet_initialization(canon, cfg), cfg.warm_start
    else:
        u0 = np.asarray(init, dtype=float)
        u0 = np.concatenate([u0[:, r * m : (r + 1) * m] for r in order], axis=1)
        warm = False
    solved = solve(joint_spec, cfg, init=u0, warm_start=warm)
    pieces = split_trajectory(solved.trajectory, fleet.n_robots)
    parts: List[Optional[Solution]] = [None] * fleet.n_robots
    for k, r in enumerate(order):
        spec, traj = fleet.robots[r], pieces[k]
        u = traj.controls
        erg = spec.objective.value(traj.states)
        cc = float(spec.dt * np.einsum("ti,ij,tj->", u, spec.R, u))
        safety = audit_points(spec.constraints, spec.dynamics.project(traj.states)) if spec.constraints else None
        parts[r] = replace(
            solved,
            trajectory=traj,
            objective=erg + cc,
            ergodic_metric=erg,
            control_cost=cc,
            terminal_error=float(np.max(np.abs(traj.states[-1] - spec.goal))),
            safety=safety,
            history=[],
        )
    # the joint solution in the caller's robot order
    inverse = np.argsort(order)
    states = np.concatenate([pieces[k].states for k in inverse], axis=1)
    controls = np.concatenate([pieces[k].controls for k in inverse], axis=1)
    joint_spec = stack(fleet)
    traj = Trajectory(states, controls, solved.trajectory.dt)
    safety = audit_points(joint_spec.constraints, joint_spec.dynamics.project(states)) if joint_spec.constraints else None
    joint = replace(solved, trajectory=traj, safety=safety)
    return FleetSolution(joint, parts, joint_spec)
