"""Workspace geometry, discrete-time dynamics and trajectories.

Everything here is immutable once built. States are rows of a ``(T, n)``
array and controls rows of a ``(T - 1, m)`` array; the last control of a
``T``-step horizon never influences the rollout, so it is not stored.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

StepFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]
JacFn = Callable[[np.ndarray, np.ndarray, float], "tuple[np.ndarray, np.ndarray]"]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned box ``[0, L_0] x ... x [0, L_{v-1}]``."""

    bounds: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in np.atleast_1d(self.bounds))
        if len(b) < 1:
            raise ValueError("workspace needs at least one dimension")
        if any(not np.isfinite(x) or x <= 0 for x in b):
            raise ValueError(f"workspace extents must be positive, got {b}")
        object.__setattr__(self, "bounds", b)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def extents(self) -> np.ndarray:
        return np.asarray(self.bounds)

    def contains(self, w, tol: float = 0.0) -> bool:
        w = np.asarray(w, dtype=float)
        return bool(np.all(w >= -tol) and np.all(w <= self.extents + tol))


@dataclass(frozen=True, eq=False)
class Dynamics:
    """Discrete dynamics ``x_{t+1} = step(x_t, u_t, dt)`` plus the workspace map.

    The workspace map selects state coordinates: ``position_index[r]`` lists
    the ``v`` state entries holding agent ``r``'s workspace point. A plain
    single robot has one row; stacked fleets have one row per robot.
    ``jacobian`` returns ``(df/dx, df/du)`` and is only needed by the
    optimizer for dynamics other than the single integrator.
    """

    n: int
    m: int
    step: StepFn
    position_index: np.ndarray
    u_min: np.ndarray = None
    u_max: np.ndarray = None
    jacobian: Optional[JacFn] = None
    single_integrator: bool = False

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("state and control dimensions must be positive")
        idx = np.atleast_2d(np.asarray(self.position_index, dtype=int))
        if idx.min() < 0 or idx.max() >= self.n:
            raise ValueError("position_index refers outside the state vector")
        idx.setflags(write=False)
        object.__setattr__(self, "position_index", idx)
        lo = np.full(self.m, -np.inf) if self.u_min is None else np.broadcast_to(self.u_min, (self.m,))
        hi = np.full(self.m, np.inf) if self.u_max is None else np.broadcast_to(self.u_max, (self.m,))
        if np.any(np.asarray(lo) > np.asarray(hi)):
            raise ValueError("control lower bound exceeds upper bound")
        object.__setattr__(self, "u_min", _frozen(lo))
        object.__setattr__(self, "u_max", _frozen(hi))

    @property
    def n_agents(self) -> int:
        return self.position_index.shape[0]

    @property
    def workspace_dim(self) -> int:
        return self.position_index.shape[1]

    @property
    def bounded(self) -> bool:
        return bool(np.any(np.isfinite(self.u_min)) or np.any(np.isfinite(self.u_max)))

    def project(self, states: np.ndarray) -> np.ndarray:
        """Map states ``(..., n)`` to workspace points ``(..., n_agents, v)``."""
        return np.asarray(states)[..., self.position_index]

    def clip_controls(self, controls: np.ndarray) -> np.ndarray:
        if not self.bounded:
            return controls
        return np.clip(controls, self.u_min, self.u_max)


def euler_step(x, u, dt):
    return x + u * dt


def euler_jacobian(x, u, dt):
    n = np.shape(x)[0]
    return np.eye(n), dt * np.eye(n)


def single_integrator(dim: int, u_max: Optional[float] = None) -> Dynamics:
    """``x_{t+1} = x_t + u_t * dt`` in ``dim`` dimensions; the workspace map is the identity."""
    if dim < 1:
        raise ValueError("single integrator dimension must be >= 1")
    bound = None if u_max is None else float(u_max)
    return Dynamics(
        n=dim,
        m=dim,
        step=euler_step,
        position_index=np.arange(dim)[None, :],
        u_min=None if bound is None else -bound,
        u_max=bound,
        jacobian=euler_jacobian,
        single_integrator=True,
    )


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    controls: np.ndarray
    dt: float

    def __post_init__(self):
        x = np.atleast_2d(np.array(self.states, dtype=float))
        u = np.array(self.controls, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1) if x.shape[1] == 1 else u.reshape(1, -1)
        if x.shape[0] < 2:
            raise ValueError("a trajectory needs at least two states")
        if u.shape[0] != x.shape[0] - 1:
            raise ValueError(f"expected {x.shape[0] - 1} controls, got {u.shape[0]}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        x.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "controls", u)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def T(self) -> int:
        return self.states.shape[0]

    @property
    def duration(self) -> float:
        return self.T * self.dt


def rollout(dynamics: Dynamics, x0, controls, dt: float) -> Trajectory:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    u = np.asarray(controls, dtype=float)
    if x0.shape[0] != dynamics.n:
        raise ValueError(f"x0 has dimension {x0.shape[0]}, dynamics expects {dynamics.n}")
    if u.ndim != 2 or u.shape[0] < 1 or u.shape[1] != dynamics.m:
        raise ValueError(f"controls must be a non-empty (T-1, {dynamics.m}) array, got shape {u.shape}")
    states = np.empty((u.shape[0] + 1, dynamics.n))
    states[0] = x0
    for t in range(u.shape[0]):
        states[t + 1] = dynamics.step(states[t], u[t], dt)
    return Trajectory(states, u, dt)


def clamp_to_workspace(w, ws: Workspace) -> np.ndarray:
    """Clip workspace points (last axis of size ``ws.dim``) into the box."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != ws.dim:
        raise ValueError(f"point dimension {w.shape[-1]} != workspace dimension {ws.dim}")
    return np.clip(w, 0.0, ws.extents)

