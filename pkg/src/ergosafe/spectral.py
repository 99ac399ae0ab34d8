"""Cosine Fourier basis over a rectangular workspace.

Basis functions are ``F_k(w) = prod_i cos(k_i pi w_i / L_i) / h_k`` for
integer modes ``k`` in ``{0..K-1}^v``. ``h_k`` makes every ``F_k`` unit-norm
in L2 over the workspace, and ``weights`` (Sobolev-type,
``(1 + |k|^2)^(-(v+1)/2)``) damp the high frequencies in the metric.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Workspace, clamp_to_workspace

GRID_NORMALIZATION_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FourierBasis:
    workspace: Workspace
    modes_per_dim: int = 10

    def __post_init__(self):
        K = int(self.modes_per_dim)
        if K < 1:
            raise ValueError("modes_per_dim must be >= 1")
        v = self.workspace.dim
        modes = np.array(list(itertools.product(range(K), repeat=v)), dtype=int).reshape(-1, v)
        L = self.workspace.extents
        factors = np.where(modes == 0, L, L / 2.0)
        norms = np.sqrt(np.prod(factors, axis=1))
        weights = (1.0 + np.sum(modes.astype(float) ** 2, axis=1)) ** (-(v + 1) / 2.0)
        for a in (modes, norms, weights):
            a.setflags(write=False)
        object.__setattr__(self, "modes_per_dim", K)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "norms", norms)
        object.__setattr__(self, "weights", weights)
        # angular frequency per mode and axis: k_i pi / L_i
        freqs = modes * np.pi / L
        freqs.setflags(write=False)
        object.__setattr__(self, "freqs", freqs)

    @property
    def num_modes(self) -> int:
        return self.modes.shape[0]

    def mode_index(self, k) -> int:
        k = tuple(int(x) for x in np.atleast_1d(k))
        if len(k) != self.workspace.dim:
            raise ValueError(f"mode {k} has wrong dimension")
        if any(x < 0 or x >= self.modes_per_dim for x in k):
            raise IndexError(f"mode {k} outside 0..{self.modes_per_dim - 1}")
        idx = 0
        for x in k:
            idx = idx * self.modes_per_dim + x
        return idx

    def _axis_tables(self, points: np.ndarray):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        k = np.arange(self.modes_per_dim)
        w = k[None, None, :] * (np.pi / self.workspace.extents)[None, :, None]
        arg = P[:, :, None] * w
        return np.cos(arg), np.sin(arg), w

    @staticmethod
    def _outer(factors) -> np.ndarray:
        # row-major product over axes, matching the itertools.product mode order
        out = factors[0]
        for f in factors[1:]:
            out = (out[:, :, None] * f[:, None, :]).reshape(out.shape[0], -1)
        return out

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """All basis functions at ``points`` ``(P, v)``; returns ``(P, M)``."""
        cos, _, _ = self._axis_tables(points)
        v = cos.shape[1]
        return self._outer([cos[:, i, :] for i in range(v)]) / self.norms

    def evaluate_with_gradient(self, points: np.ndarray):
        """Basis values ``(P, M)`` and spatial gradients ``(P, M, v)``."""
        cos, sin, w = self._axis_tables(points)
        v = cos.shape[1]
        cols = [cos[:, i, :] for i in range(v)]
        values = self._outer(cols) / self.norms
        grad = np.empty(values.shape + (v,))
        for i in range(v):
            dcols = list(cols)
            dcols[i] = -w[:, i, :] * sin[:, i, :]
            grad[:, :, i] = self._outer(dcols) / self.norms
        return values, grad

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Spatial gradient of every basis function, shape ``(P, M, v)``."""
        return self.evaluate_with_gradient(points)[1]

    def average_and_pullback(self, points: np.ndarray):
        """Mean basis values over ``points`` plus a closure for weighted gradients.

        The closure maps per-mode weights ``a`` ``(M,)`` to
        ``sum_k a_k grad F_k(p)`` for every point, shape ``(P, v)``. It
        contracts one axis at a time instead of forming the ``(P, M, v)``
        gradient tensor.
        """
        cos, sin, w = self._axis_tables(points)
        P, v, K = cos.shape
        if v == 2:
            avg = (cos[:, 0, :].T @ cos[:, 1, :]).ravel() / P
        else:
            avg = self._outer([cos[:, i, :] for i in range(v)]).mean(axis=0)
        avg = avg / self.norms
        dcos = -w * sin

        def pullback(a: np.ndarray) -> np.ndarray:
            G = (np.asarray(a) / self.norms).reshape((K,) * v)
            out = np.empty((P, v))
            for i in range(v):
                tables = [dcos[:, j, :] if j == i else cos[:, j, :] for j in range(v)]
                acc = tables[-1] @ G.reshape(-1, K).T  # (P, K^(v-1))
                for j in range(v - 2, -1, -1):
                    acc = np.einsum("pak,pk->pa", acc.reshape(P, -1, K), tables[j])
                out[:, i] = acc.reshape(P)
            return out

        return avg, pullback


def basis_eval(basis: FourierBasis, k, w) -> float:
    j = basis.mode_index(k)
    w = np.asarray(w, dtype=float)
    return float(np.prod(np.cos(w * basis.freqs[j])) / basis.norms[j])


def basis_grad(basis: FourierBasis, k, w) -> np.ndarray:
    j = basis.mode_index(k)
    return basis.gradient(np.asarray(w, dtype=float)[None, :])[0, j]


@dataclass(frozen=True, eq=False)
class SpatialMeasure:
    """Target density over the workspace, either uniform or tabulated on a grid.

    A grid density is a ``v``-dimensional array; cell ``(i_0, ..., i_{v-1})``
    covers ``[i_d * L_d / N_d, (i_d + 1) * L_d / N_d]`` on each axis and the
    density is taken as constant over the cell.
    """

    kind: str = "uniform"
    density: Optional[np.ndarray] = None
    workspace: Optional[Workspace] = None
    source: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "grid"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.kind == "grid":
            if self.density is None or self.workspace is None:
                raise ValueError("grid measure needs a density array and a workspace")
            d = np.array(self.density, dtype=float)
            if d.ndim != self.workspace.dim:
                raise ValueError(f"density has {d.ndim} axes, workspace has {self.workspace.dim}")
            if np.any(d < 0) or not np.all(np.isfinite(d)):
                raise ValueError("density must be finite and non-negative")
            d.setflags(write=False)
            object.__setattr__(self, "density", d)

    @classmethod
    def uniform(cls) -> "SpatialMeasure":
        return cls("uniform")

    @classmethod
    def from_grid(cls, density, workspace: Workspace, source: Optional[str] = None) -> "SpatialMeasure":
        return cls("grid", np.asarray(density, dtype=float), workspace, source)

    def cell_volume(self) -> float:
        return float(np.prod(self.workspace.extents / np.array(self.density.shape)))

    def cell_centers(self) -> np.ndarray:
        axes = [
            (np.arange(n) + 0.5) * (L / n)
            for n, L in zip(self.density.shape, self.workspace.extents)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def total_mass(self) -> float:
        if self.kind == "uniform":
            return 1.0
        return float(self.density.sum() * self.cell_volume())


def uniform_grid(workspace: Workspace, cells_per_dim: int = 100) -> SpatialMeasure:
    """Grid tabulation of the uniform density (mostly useful as a quadrature check)."""
    shape = (cells_per_dim,) * workspace.dim
    return SpatialMeasure.from_grid(np.full(shape, 1.0 / np.prod(workspace.extents)), workspace)


def measure_coefficients(basis: FourierBasis, measure: SpatialMeasure) -> np.ndarray:
    if measure.kind == "uniform":
        phi = np.zeros(basis.num_modes)
        # only the constant mode survives integration against a constant
        phi[0] = 1.0 / basis.norms[0]
        return phi
    if measure.workspace.bounds != basis.workspace.bounds:
        raise ValueError("measure and basis are defined on different workspaces")
    mass = measure.total_mass()
    if abs(mass - 1.0) > GRID_NORMALIZATION_TOL:
        raise ValueError(f"measure is not normalized: integrates to {mass:.9g}")
    centers = measure.cell_centers()
    F = basis.evaluate(centers)
    return (measure.density.ravel() @ F) * measure.cell_volume()


def trajectory_coefficients(basis: FourierBasis, points: np.ndarray) -> np.ndarray:
    """Time-averaged basis values over workspace points ``(T, v)`` or ``(T, R, v)``.

    Points are clamped into the workspace first. Several agents per time step
    are pooled, so the result is the average over all ``T * R`` visits.
    """
    pts = np.asarray(points, dtype=float)
    pts = clamp_to_workspace(pts.reshape(-1, pts.shape[-1]), basis.workspace)
    return basis.evaluate(pts).mean(axis=0)


def load_grid_measure(path, workspace: Optional[Workspace] = None) -> SpatialMeasure:
    """Read a grid density file.

    Format (whitespace separated, ``#`` starts a comment)::

        dims N_0 ... N_{v-1}
        bounds L_0 ... L_{v-1}
        <N_0 * ... * N_{v-1} densities in row-major (C) order>
    """
    dims = bounds = None
    values: list = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "dims":
                dims = tuple(int(x) for x in rest)
            elif head == "bounds":
                bounds = tuple(float(x) for x in rest)
            else:
                values.extend(float(x) for x in line.split())
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    if dims is None or bounds is None:
        raise ValueError(f"{path}: missing 'dims' or 'bounds' header")
    if len(dims) != len(bounds):
        raise ValueError(f"{path}: dims and bounds disagree in length")
    if len(values) != int(np.prod(dims)):
        raise ValueError(f"{path}: expected {int(np.prod(dims))} densities, found {len(values)}")
    ws = Workspace(bounds)
    if workspace is not None and workspace.bounds != ws.bounds:
        raise ValueError(f"{path}: bounds {ws.bounds} differ from workspace {workspace.bounds}")
    return SpatialMeasure.from_grid(np.array(values).reshape(dims), ws, source=str(path))


def save_grid_measure(measure: SpatialMeasure, path) -> None:
    d = measure.density
    lines = [
        "dims " + " ".join(str(n) for n in d.shape),
        "bounds " + " ".join(repr(L) for L in measure.workspace.bounds),
    ]
    rows = d.reshape(-1, d.shape[-1])
    lines.extend(" ".join(f"{x:.17g}" for x in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")
