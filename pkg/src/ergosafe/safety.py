"""Barrier functions, discrete CBF residuals and trajectory safety audits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .core import Trajectory

VIOLATION_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Superellipsoid:
    """Obstacle barrier ``h(w) = || (w - center) / (scale + buffer) ||_p - radius``.

    ``h`` is negative inside the inflated obstacle, zero on its boundary and
    positive outside. ``p = 2`` gives ellipses, ``p = 4`` rounded boxes.
    """

    center: np.ndarray
    scale: np.ndarray
    buffer: float = 0.0
    radius: float = 1.0
    p: float = 2.0
    name: str = ""

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        s = np.broadcast_to(np.array(self.scale, dtype=float), c.shape).copy()
        if self.buffer < 0:
            raise ValueError("buffer must be non-negative")
        if np.any(s + self.buffer <= 0):
            raise ValueError("scale + buffer must be positive on every axis")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.p >= 2:
            raise ValueError("norm order p must be >= 2")
        c.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "buffer", float(self.buffer))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "p", float(self.p))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def inflated_scale(self) -> np.ndarray:
        return self.scale + self.buffer

    def value(self, w) -> np.ndarray:
        z = np.abs((np.asarray(w, dtype=float) - self.center) / self.inflated_scale)
        return _pnorm(z, self.p) - self.radius

    def gradient(self, w):
        """Returns ``(grad, degenerate)``; at the center the gradient is zero and flagged."""
        z = (np.asarray(w, dtype=float) - self.center) / self.inflated_scale
        norm = _pnorm(np.abs(z), self.p)
        degenerate = norm == 0.0
        safe = np.where(degenerate, 1.0, norm)[..., None]
        g = np.sign(z) * (np.abs(z) / safe) ** (self.p - 1) / self.inflated_scale
        g = np.where(degenerate[..., None], 0.0, g)
        return g, degenerate


def _pnorm(z: np.ndarray, p: float) -> np.ndarray:
    # scale by the max entry so large p does not overflow
    zmax = np.max(z, axis=-1)
    safe = np.where(zmax == 0.0, 1.0, zmax)
    r = np.sum((z / safe[..., None]) ** p, axis=-1) ** (1.0 / p)
    return np.where(zmax == 0.0, 0.0, r * zmax)


@dataclass(frozen=True)
class PairwiseBarrier:
    """Keeps agents ``i`` and ``j`` at least ``d_min`` apart: ``h = |w_i - w_j| - d_min``."""

    i: int
    j: int
    d_min: float

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("pairwise barrier needs two distinct agents")
        if not self.d_min > 0:
            raise ValueError("d_min must be positive")

    def value(self, w_i, w_j) -> np.ndarray:
        d = np.asarray(w_i, dtype=float) - np.asarray(w_j, dtype=float)
        return np.sqrt(np.sum(d * d, axis=-1)) - self.d_min

    def gradient(self, w_i, w_j):
        """Gradient with respect to ``w_i`` (the ``w_j`` one is its negative)."""
        d = np.asarray(w_i, dtype=float) - np.asarray(w_j, dtype=float)
        dist = np.sqrt(np.sum(d * d, axis=-1))
        degenerate = dist == 0.0
        g = d / np.where(degenerate, 1.0, dist)[..., None]
        return np.where(degenerate[..., None], 0.0, g), degenerate


Barrier = Union[Superellipsoid, PairwiseBarrier]


@dataclass(frozen=True, eq=False)
class DcbfConstraint:
    """Discrete CBF ``h(x_{t+1}) >= (1 - gamma) h(x_t)`` on one barrier.

    ``agent`` picks which robot an obstacle barrier applies to; pairwise
    barriers carry their own agent pair.
    """

    barrier: Barrier
    gamma: float
    agent: int = 0

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")

    @property
    def pairwise(self) -> bool:
        return isinstance(self.barrier, PairwiseBarrier)

    @property
    def label(self) -> str:
        b = self.barrier
        if self.pairwise:
            return f"pair[{b.i},{b.j}]"
        name = b.name or "obstacle"
        return f"{name}@robot{self.agent}" if self.agent else name

    def h(self, points) -> np.ndarray:
        """Barrier value from per-agent points ``(..., R, v)``.

        A bare ``(v,)`` point is accepted for obstacle barriers.
        """
        pts = np.asarray(points, dtype=float)
        b = self.barrier
        if self.pairwise:
            return b.value(pts[..., b.i, :], pts[..., b.j, :])
        if pts.ndim == 1:
            return b.value(pts)
        return b.value(pts[..., self.agent, :])

    def h_gradient(self, points) -> np.ndarray:
        """``dh/dpoints``, same shape as ``points`` ``(..., R, v)``."""
        pts = np.asarray(points, dtype=float)
        out = np.zeros_like(pts)
        b = self.barrier
        if self.pairwise:
            g, _ = b.gradient(pts[..., b.i, :], pts[..., b.j, :])
            out[..., b.i, :] = g
            out[..., b.j, :] = -g
        else:
            g, _ = b.gradient(pts[..., self.agent, :])
            out[..., self.agent, :] = g
        return out


def barrier_value(bar: Superellipsoid, w) -> float:
    return float(bar.value(w))


def barrier_gradient(bar: Superellipsoid, w):
    g, degenerate = bar.gradient(np.asarray(w, dtype=float))
    return g, bool(degenerate)


def pairwise_value(pb: PairwiseBarrier, w_i, w_j) -> float:
    return float(pb.value(w_i, w_j))


def dcbf_residual(c: DcbfConstraint, w_t, w_next) -> float:
    """``h(w_next) - (1 - gamma) h(w_t)``; the constraint holds iff this is >= 0."""
    return float(c.h(w_next) - (1.0 - c.gamma) * c.h(w_t))


def residual_sequence(c: DcbfConstraint, h_values: np.ndarray) -> np.ndarray:
    h = np.asarray(h_values, dtype=float)
    return h[1:] - (1.0 - c.gamma) * h[:-1]


@dataclass
class ConstraintAudit:
    label: str
    gamma: float
    min_h: float
    min_residual: float
    first_violation: Optional[int]
    min_bound_gap: float

    @property
    def passed(self) -> bool:
        return self.first_violation is None


@dataclass
class SafetyReport:
    audits: List[ConstraintAudit] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.audits)

    @property
    def min_h(self) -> float:
        return min((a.min_h for a in self.audits), default=float("inf"))

    @property
    def min_residual(self) -> float:
        return min((a.min_residual for a in self.audits), default=float("inf"))

    def failures(self) -> List[str]:
        return [a.label for a in self.audits if not a.passed]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "constraints": [
                {
                    "label": a.label,
                    "gamma": a.gamma,
                    "min_h": a.min_h,
                    "min_residual": a.min_residual,
                    "first_violation": a.first_violation,
                    "passed": a.passed,
                }
                for a in self.audits
            ],
        }


def audit_points(constraints: Sequence[DcbfConstraint], points: np.ndarray, tol: float = VIOLATION_TOL) -> SafetyReport:
    """Audit per-agent workspace points ``(T, R, v)`` against every constraint.

    A step violates when ``h < 0`` or when the DCBF residual entering it is
    below ``-tol``. ``min_bound_gap`` is ``min_t h_t - (1 - gamma)^t h_0``,
    the slack in the exponential lower bound implied by the DCBF.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 2:
        pts = pts[:, None, :]
    report = SafetyReport()
    for c in constraints:
        h = c.h(pts)
        res = residual_sequence(c, h)
        bad = h < 0.0
        bad[1:] |= res < -tol
        idx = np.flatnonzero(bad)
        decay = (1.0 - c.gamma) ** np.arange(h.shape[0])
        report.audits.append(
            ConstraintAudit(
                label=c.label,
                gamma=c.gamma,
                min_h=float(h.min()),
                min_residual=float(res.min()) if res.size else float("inf"),
                first_violation=int(idx[0]) if idx.size else None,
                min_bound_gap=float(np.min(h - decay * h[0])),
            )
        )
    return report


def audit_trajectory(constraints: Sequence[DcbfConstraint], traj: Trajectory, g=None) -> SafetyReport:
    """Audit a trajectory.

    ``g`` is the workspace map: a :class:`~ergosafe.core.Dynamics`, a
    ``position_index`` array, or ``None`` for states that already are
    single-agent workspace points.
    """
    if g is None:
        pts = traj.states[:, None, :]
    elif hasattr(g, "project"):
        pts = g.project(traj.states)
    else:
        pts = traj.states[:, np.atleast_2d(np.asarray(g, dtype=int))]
    return audit_points(constraints, pts)


class BarrierBank:
    """Vectorized evaluation of many constraints' barrier values over a trajectory.

    Row ``i`` of :meth:`values` corresponds to ``constraints[i]``.
    """

    def __init__(self, constraints: Sequence[DcbfConstraint]):
        self.constraints = list(constraints)
        obs = [(i, c) for i, c in enumerate(self.constraints) if not c.pairwise]
        pairs = [(i, c) for i, c in enumerate(self.constraints) if c.pairwise]
        self.obs_rows = np.array([i for i, _ in obs], dtype=int)
        self.pair_rows = np.array([i for i, _ in pairs], dtype=int)
        if obs:
            self.centers = np.stack([c.barrier.center for _, c in obs])
            self.inv_scale = np.stack([1.0 / c.barrier.inflated_scale for _, c in obs])
            self.radius = np.array([c.barrier.radius for _, c in obs])
            self.p = np.array([c.barrier.p for _, c in obs])
            self.agent = np.array([c.agent for _, c in obs], dtype=int)
        if pairs:
            self.pi = np.array([c.barrier.i for _, c in pairs], dtype=int)
            self.pj = np.array([c.barrier.j for _, c in pairs], dtype=int)
            self.dmin = np.array([c.barrier.d_min for _, c in pairs])
        self.gamma = np.array([c.gamma for c in self.constraints])

    def __len__(self) -> int:
        return len(self.constraints)

    def _obstacle_terms(self, pts):
        w = pts[:, self.agent, :]  # (T, B, v)
        z = (w - self.centers) * self.inv_scale
        a = np.abs(z)
        zmax = a.max(axis=-1)
        safe = np.where(zmax == 0.0, 1.0, zmax)
        q = (a / safe[..., None]) ** self.p[:, None]
        norm = np.sum(q, axis=-1) ** (1.0 / self.p) * zmax
        return z, a, norm

    def values(self, pts: np.ndarray) -> np.ndarray:
        """Barrier values ``(n_constraints, T)`` from points ``(T, R, v)``."""
        out = np.empty((len(self.constraints), pts.shape[0]))
        if self.obs_rows.size:
            _, _, norm = self._obstacle_terms(pts)
            out[self.obs_rows] = (norm - self.radius).T
        if self.pair_rows.size:
            d = pts[:, self.pi, :] - pts[:, self.pj, :]
            out[self.pair_rows] = (np.sqrt(np.sum(d * d, axis=-1)) - self.dmin).T
        return out

    def vjp(self, pts: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """``sum_i sum_t weights[i, t] * dh_i(t)/dpts``, shaped like ``pts``."""
        out = np.zeros_like(pts)
        if self.obs_rows.size:
            z, a, norm = self._obstacle_terms(pts)
            safe = np.where(norm == 0.0, 1.0, norm)
            g = np.sign(z) * (a / safe[..., None]) ** (self.p[:, None] - 1.0) * self.inv_scale
            g[norm == 0.0] = 0.0
            g *= weights[self.obs_rows].T[..., None]
            for b, r in enumerate(self.agent):
                out[:, r, :] += g[:, b, :]
        if self.pair_rows.size:
            d = pts[:, self.pi, :] - pts[:, self.pj, :]
            dist = np.sqrt(np.sum(d * d, axis=-1))
            g = d / np.where(dist == 0.0, 1.0, dist)[..., None]
            g[dist == 0.0] = 0.0
            g *= weights[self.pair_rows].T[..., None]
            for k in range(self.pi.size):
                out[:, self.pi[k], :] += g[:, k, :]
                out[:, self.pj[k], :] -= g[:, k, :]
        return out
