"""Discrete ergodic metric and its gradient with respect to the state sequence."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Trajectory
from .spectral import FourierBasis, SpatialMeasure, measure_coefficients


@dataclass(frozen=True, eq=False)
class ErgodicObjective:
    """``E(x) = sum_k weights_k (c_k(x) - target_k)^2``.

    ``position_index`` is the workspace map (see :class:`ergosafe.core.Dynamics`);
    with several rows the coefficients pool every agent's visits.
    """

    basis: FourierBasis
    target: np.ndarray
    position_index: Optional[np.ndarray] = None
    weight_scale: float = 1.0

    def __post_init__(self):
        phi = np.array(self.target, dtype=float).reshape(-1)
        if phi.shape[0] != self.basis.num_modes:
            raise ValueError(f"target has {phi.shape[0]} coefficients, basis has {self.basis.num_modes} modes")
        phi.setflags(write=False)
        object.__setattr__(self, "target", phi)
        idx = self.position_index
        if idx is None:
            idx = np.arange(self.basis.workspace.dim)[None, :]
        idx = np.atleast_2d(np.asarray(idx, dtype=int))
        if idx.shape[1] != self.basis.workspace.dim:
            raise ValueError("position_index width must match the workspace dimension")
        idx.setflags(write=False)
        object.__setattr__(self, "position_index", idx)

    @classmethod
    def from_measure(cls, basis: FourierBasis, measure: SpatialMeasure, position_index=None):
        return cls(basis, measure_coefficients(basis, measure), position_index)

    @property
    def weights(self) -> np.ndarray:
        return self.basis.weights * self.weight_scale

    def _points(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=float)[:, self.position_index]

    def coefficients(self, states: np.ndarray) -> np.ndarray:
        pts = self._points(states).reshape(-1, self.basis.workspace.dim)
        pts = np.clip(pts, 0.0, self.basis.workspace.extents)
        return self.basis.average_and_pullback(pts)[0]

    def value(self, states: np.ndarray) -> float:
        diff = self.coefficients(states) - self.target
        return float(np.sum(self.weights * diff * diff))

    def value_and_gradient(self, states: np.ndarray):
        states = np.asarray(states, dtype=float)
        T, n = states.shape
        v = self.basis.workspace.dim
        raw = self._points(states).reshape(-1, v)
        L = self.basis.workspace.extents
        pts = np.clip(raw, 0.0, L)
        avg, pullback = self.basis.average_and_pullback(pts)
        diff = avg - self.target
        value = float(np.sum(self.weights * diff * diff))
        dpts = pullback(2.0 * self.weights * diff / raw.shape[0])
        # clamp has zero derivative in a coordinate that was clipped
        dpts[(raw < 0.0) | (raw > L)] = 0.0
        grad = np.zeros((T, n))
        R = self.position_index.shape[0]
        dpts = dpts.reshape(T, R, v)
        for r in range(R):
            np.add.at(grad, (slice(None), self.position_index[r]), dpts[:, r, :])
        return value, grad


def metric(obj: ErgodicObjective, traj: Trajectory) -> float:
    return obj.value(traj.states)


def metric_gradient(obj: ErgodicObjective, traj: Trajectory) -> np.ndarray:
    """``dE/dx_t`` for every state, shape ``(T, n)``."""
    return obj.value_and_gradient(traj.states)[1]
