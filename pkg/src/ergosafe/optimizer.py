"""Ergodic trajectory optimization with discrete CBF safety constraints.

The decision variables are the controls only (single shooting), so every
iterate is an exact rollout of the dynamics. Constraints are handled with an
augmented Lagrangian:

* equality: terminal state ``x_{T-1} = goal``;
* inequality, per ``mode``:

  - ``"dcbf"``: ``h(x_{t+1}) - (1 - gamma) h(x_t) >= 0`` for every step and barrier,
  - ``"plain_h"``: ``h(x_t) >= 0`` for every step after the first,
  - ``"none"``: nothing beyond the boundary conditions;

* a quadratic penalty keeping workspace points inside the box.

The inner problem is solved with L-BFGS-B by default, or with projected
gradient descent (Barzilai-Borwein trial step, nonmonotone Armijo
backtracking). Control bounds are enforced by projection in both.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .core import Dynamics, Trajectory, Workspace, rollout
from .ergodic import ErgodicObjective
from .safety import VIOLATION_TOL, BarrierBank, DcbfConstraint, SafetyReport, audit_points

logger = logging.getLogger(__name__)

MODES = ("dcbf", "plain_h", "none")


class SpecError(ValueError):
    """A problem specification violates one of its invariants."""


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    dynamics: Dynamics
    workspace: Workspace
    objective: ErgodicObjective
    start: np.ndarray
    goal: np.ndarray
    constraints: Sequence[DcbfConstraint] = ()
    mode: str = "dcbf"
    T: int = 200
    dt: float = 0.1
    R: Optional[np.ndarray] = None

    def __post_init__(self):
        m = self.dynamics.m
        R = 0.01 * np.eye(m) if self.R is None else np.atleast_2d(np.array(self.R, dtype=float))
        x0 = np.array(self.start, dtype=float).reshape(-1)
        xf = np.array(self.goal, dtype=float).reshape(-1)
        for a in (R, x0, xf):
            a.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "start", x0)
        object.__setattr__(self, "goal", xf)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "dt", float(self.dt))
        self.validate()

    def validate(self) -> None:
        n, m = self.dynamics.n, self.dynamics.m
        if self.mode not in MODES:
            raise SpecError(f"unknown inequality mode {self.mode!r}; expected one of {MODES}")
        if self.T < 2:
            raise SpecError("horizon T must be >= 2")
        if not self.dt > 0:
            raise SpecError("dt must be positive")
        if self.start.shape != (n,) or self.goal.shape != (n,):
            raise SpecError(f"start and goal must be states of dimension {n}")
        if self.R.shape != (m, m):
            raise SpecError(f"R must be {m}x{m}")
        if not np.allclose(self.R, self.R.T):
            raise SpecError("R must be symmetric")
        if np.linalg.eigvalsh(self.R).min() < -1e-10:
            raise SpecError("R must be positive semi-definite")
        if self.dynamics.workspace_dim != self.workspace.dim:
            raise SpecError("dynamics workspace map and workspace disagree in dimension")
        if self.objective.basis.workspace.bounds != self.workspace.bounds:
            raise SpecError("ergodic objective is defined over a different workspace")
        for label, x in (("start", self.start), ("goal", self.goal)):
            pts = self.dynamics.project(x)
            if not all(self.workspace.contains(p) for p in pts):
                raise SpecError(f"{label} {x.tolist()} lies outside the workspace {self.workspace.bounds}")
            if self.mode == "none":
                continue
            for c in self.constraints:
                h = float(c.h(pts))
                if h < 0:
                    raise SpecError(f"{label} violates barrier {c.label} (h = {h:.4g})")

    def with_mode(self, mode: str) -> "ProblemSpec":
        return replace(self, mode=mode)

    def with_gamma(self, gamma: float) -> "ProblemSpec":
        return replace(self, constraints=[replace(c, gamma=gamma) for c in self.constraints])

    def with_R(self, R) -> "ProblemSpec":
        return replace(self, R=np.asarray(R, dtype=float))


@dataclass(frozen=True)
class SolverConfig:
    max_outer: int = 12
    max_inner: int = 300
    rho0: float = 10.0
    rho_growth: float = 5.0
    rho_max: float = 1e7
    grad_tol: float = 1e-4
    viol_tol: float = 1e-6
    armijo: float = 1e-4
    backtrack: float = 0.5
    # inequalities are solved as c >= margin so small AL residuals stay on the safe side
    margin: float = 1e-4
    # terminal tolerance as a fraction of the smallest workspace extent
    terminal_tol: float = 1e-3
    perturbation: float = 0.01
    # "lbfgs" (scipy L-BFGS-B) or "gradient" (projected BB gradient descent)
    inner_solver: str = "lbfgs"
    memory: int = 20
    nonmonotone_window: int = 10
    # before a constrained solve, optimize coverage with only the boundary conditions
    warm_start: bool = True
    warm_outer: int = 3
    # outer loop stops once a feasible objective changes by less than this (relative)
    settle_tol: float = 1e-4
    seed: int = 0
    eq_multipliers: Optional[tuple] = None
    ineq_multipliers: Optional[tuple] = None

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if not self.rho_growth > 1:
            raise ValueError("rho_growth must exceed 1")
        if min(self.grad_tol, self.viol_tol, self.terminal_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if not (0 < self.backtrack < 1) or not (0 < self.armijo < 1):
            raise ValueError("line-search parameters must lie in (0, 1)")
        if self.inner_solver not in ("lbfgs", "gradient"):
            raise ValueError(f"unknown inner solver {self.inner_solver!r}")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass
class Solution:
    trajectory: Trajectory
    objective: float
    ergodic_metric: float
    control_cost: float
    terminal_error: float
    max_violation: float
    workspace_violation: float
    converged: bool
    outer_iterations: int
    inner_iterations: int
    seconds: float
    mode: str
    safety: Optional[SafetyReport] = None
    history: List[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "objective": self.objective,
            "ergodic_metric": self.ergodic_metric,
            "control_cost": self.control_cost,
            "terminal_error": self.terminal_error,
            "max_violation": self.max_violation,
            "workspace_violation": self.workspace_violation,
            "converged": self.converged,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
            "seconds": self.seconds,
        }


def _states(spec: ProblemSpec, u: np.ndarray) -> np.ndarray:
    if spec.dynamics.single_integrator:
        # same left-to-right accumulation as rollout(), so results agree bit for bit
        return np.cumsum(np.vstack([spec.start[None, :], u * spec.dt]), axis=0)
    return rollout(spec.dynamics, spec.start, u, spec.dt).states


def _controls_gradient(spec: ProblemSpec, u: np.ndarray, x: np.ndarray, gx: np.ndarray) -> np.ndarray:
    """Chain state gradients ``(T, n)`` back to the controls ``(T-1, m)``."""
    if spec.dynamics.single_integrator:
        # x_t = x_0 + dt * sum_{s<t} u_s
        return spec.dt * np.cumsum(gx[:0:-1], axis=0)[::-1]
    jac = spec.dynamics.jacobian
    if jac is None:
        raise SpecError("non-single-integrator dynamics need a jacobian for optimization")
    gu = np.empty_like(u)
    lam = gx[-1].copy()
    for t in range(u.shape[0] - 1, -1, -1):
        A, B = jac(x[t], u[t], spec.dt)
        gu[t] = B.T @ lam
        lam = gx[t] + A.T @ lam
    return gu


class _Problem:
    """Evaluates the pieces of the augmented Lagrangian for one spec."""

    def __init__(self, spec: ProblemSpec, cfg: SolverConfig):
        self.spec = spec
        self.cfg = cfg
        self.bank = BarrierBank(spec.constraints if spec.mode != "none" else [])
        self.L = spec.workspace.extents
        self.n_per = spec.T - 1 if len(self.bank) else 0
        self.n_ineq = self.n_per * len(self.bank)
        self.decay = (1.0 - self.bank.gamma)[:, None]

    # ---- constraint pieces -------------------------------------------------

    def inequalities(self, H: np.ndarray) -> np.ndarray:
        """Unshifted inequality values (feasible when >= 0), flattened row-major by constraint."""
        if not len(self.bank):
            return np.zeros(0)
        if self.spec.mode == "dcbf":
            return (H[:, 1:] - self.decay * H[:, :-1]).ravel()
        return H[:, 1:].ravel()

    def inequality_vjp(self, pts: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """``sum_i weights_i * d ineq_i / d pts``, shape of ``pts``."""
        W = weights.reshape(len(self.bank), self.n_per)
        A = np.zeros((len(self.bank), pts.shape[0]))
        A[:, 1:] += W
        if self.spec.mode == "dcbf":
            A[:, :-1] -= self.decay * W
        return self.bank.vjp(pts, A)

    # ---- objective pieces --------------------------------------------------

    def control_cost(self, u: np.ndarray) -> float:
        return float(self.spec.dt * np.einsum("ti,ij,tj->", u, self.spec.R, u))

    def workspace_excess(self, pts: np.ndarray) -> np.ndarray:
        return np.minimum(pts, 0.0) + np.maximum(pts - self.L, 0.0)

    def evaluate(self, u, lam_eq, lam_in, rho, with_grad=True):
        spec = self.spec
        x = _states(spec, u)
        pts = spec.dynamics.project(x)
        if with_grad:
            erg, gx = spec.objective.value_and_gradient(x)
        else:
            erg, gx = spec.objective.value(x), None
        total = erg + self.control_cost(u)

        e = x[-1] - spec.goal
        total += float(lam_eq @ e + 0.5 * rho * e @ e)

        ws = self.workspace_excess(pts)
        total += 0.5 * rho * float(np.sum(ws * ws))

        gpts = None
        if self.n_ineq:
            H = self.bank.values(pts)
            c = self.inequalities(H) - self.cfg.margin
            shifted = np.maximum(0.0, lam_in - rho * c)
            total += float(np.sum(shifted * shifted - lam_in * lam_in)) / (2.0 * rho)
            if with_grad:
                gpts = self.inequality_vjp(pts, -shifted)

        if not with_grad:
            return total
        gp = rho * ws if gpts is None else gpts + rho * ws
        idx = spec.dynamics.position_index
        for r in range(idx.shape[0]):
            np.add.at(gx, (slice(None), idx[r]), gp[:, r, :])
        gx[-1] += lam_eq + rho * e
        gu = _controls_gradient(spec, u, x, gx)
        gu += 2.0 * spec.dt * u @ spec.R
        return total, gu

    def measures(self, u):
        """Unpenalized quantities of an iterate."""
        spec = self.spec
        x = _states(spec, u)
        pts = spec.dynamics.project(x)
        erg = spec.objective.value(x)
        cc = self.control_cost(u)
        e = x[-1] - spec.goal
        ineq = self.inequalities(self.bank.values(pts)) if self.n_ineq else np.zeros(0)
        viol = float(np.max(np.maximum(self.cfg.margin - ineq, 0.0))) if ineq.size else 0.0
        true_min = float(ineq.min()) if ineq.size else np.inf
        ws = float(np.max(np.abs(self.workspace_excess(pts)))) if pts.size else 0.0
        return {
            "ergodic": erg,
            "control": cc,
            "objective": erg + cc,
            "eq": e,
            "terminal_error": float(np.max(np.abs(e))),
            "ineq": ineq,
            "margin_violation": viol,
            "true_min": true_min,
            "workspace": ws,
        }

    def feasible(self, meas) -> bool:
        cfg = self.cfg
        return (
            meas["terminal_error"] <= cfg.terminal_tol * float(self.L.min())
            and meas["true_min"] >= -VIOLATION_TOL
            and meas["margin_violation"] <= cfg.viol_tol
            and meas["workspace"] <= cfg.viol_tol
        )


def initialize(spec: ProblemSpec, cfg: Optional[SolverConfig] = None) -> np.ndarray:
    """Straight-line controls from start to goal plus a small seeded perturbation.

    The perturbation is drawn uniformly with amplitude
    ``cfg.perturbation * min(L)`` and has its time mean removed, so the
    straight-line endpoint is preserved (entries stay within twice the
    amplitude). Dynamics other than the single integrator start from zero
    controls.
    """
    cfg = cfg or SolverConfig()
    steps = spec.T - 1
    u = np.zeros((steps, spec.dynamics.m))
    if not spec.dynamics.single_integrator:
        return u
    u[:] = (spec.goal - spec.start) / (steps * spec.dt)
    amp = cfg.perturbation * float(spec.workspace.extents.min())
    if amp > 0 and steps > 1:
        rng = np.random.default_rng(cfg.seed)
        noise = rng.uniform(-1.0, 1.0, size=u.shape)
        noise -= noise.mean(axis=0)
        u += amp * noise
    return spec.dynamics.clip_controls(u)


def objective(spec: ProblemSpec, controls) -> float:
    """Ergodic metric of the rollout plus ``dt * sum_t u_t^T R u_t``."""
    u = np.asarray(controls, dtype=float)
    x = _states(spec, u)
    return spec.objective.value(x) + float(spec.dt * np.einsum("ti,ij,tj->", u, spec.R, u))


def _inner(prob: _Problem, u, lam_eq, lam_in, rho, cfg: SolverConfig):
    if cfg.inner_solver == "lbfgs":
        return _inner_lbfgs(prob, u, lam_eq, lam_in, rho, cfg)
    return _inner_gradient(prob, u, lam_eq, lam_in, rho, cfg)


def _inner_lbfgs(prob: _Problem, u, lam_eq, lam_in, rho, cfg: SolverConfig):
    shape = u.shape
    dyn = prob.spec.dynamics
    bounds = None
    if dyn.bounded:
        lo = np.broadcast_to(dyn.u_min, shape).ravel()
        hi = np.broadcast_to(dyn.u_max, shape).ravel()
        bounds = list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))

    def fun(z):
        f, g = prob.evaluate(z.reshape(shape), lam_eq, lam_in, rho)
        return f, g.ravel()

    res = minimize(
        fun,
        u.ravel(),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": cfg.max_inner, "gtol": cfg.grad_tol, "ftol": 1e-15, "maxcor": cfg.memory},
    )
    return dyn.clip_controls(res.x.reshape(shape)), float(res.fun), int(res.nit), res.status == 0


def _inner_gradient(prob: _Problem, u, lam_eq, lam_in, rho, cfg: SolverConfig):
    """Projected gradient descent on the augmented Lagrangian.

    Trial steps use the Barzilai-Borwein length; backtracking enforces an
    Armijo decrease relative to the worst of the last few accepted values
    (a nonmonotone rule that keeps BB steps from being cut short).
    Returns ``(u, f, iterations, stationary)``.
    """
    clip = prob.spec.dynamics.clip_controls
    f, g = prob.evaluate(u, lam_eq, lam_in, rho)
    recent = [f]
    step = 1.0 / max(1.0, float(np.max(np.abs(g))))
    for it in range(1, cfg.max_inner + 1):
        pg = u - clip(u - g)
        if float(np.max(np.abs(pg))) <= cfg.grad_tol:
            return u, f, it - 1, True
        ref = max(recent)
        alpha = step
        for _ in range(50):
            u_new = clip(u - alpha * g)
            d = u_new - u
            f_new = prob.evaluate(u_new, lam_eq, lam_in, rho, with_grad=False)
            if f_new <= ref + cfg.armijo * float(np.sum(g * d)):
                break
            alpha *= cfg.backtrack
        else:
            return u, f, it, False
        f_new, g_new = prob.evaluate(u_new, lam_eq, lam_in, rho)
        s_vec = (u_new - u).ravel()
        y_vec = (g_new - g).ravel()
        sy = float(s_vec @ y_vec)
        step = float(s_vec @ s_vec) / sy if sy > 1e-16 else 1.0 / max(1.0, float(np.max(np.abs(g_new))))
        step = min(max(step, 1e-10), 1e10)
        u, f, g = u_new, f_new, g_new
        recent.append(f)
        if len(recent) > cfg.nonmonotone_window:
            recent.pop(0)
    return u, f, cfg.max_inner, False


def _run_al(prob: _Problem, u, cfg: SolverConfig, max_outer: int):
    """Augmented-Lagrangian outer loop. Returns a dict describing the run."""
    spec = prob.spec
    lam_eq = np.zeros(spec.dynamics.n) if cfg.eq_multipliers is None else np.array(cfg.eq_multipliers, dtype=float)
    lam_in = np.zeros(prob.n_ineq) if cfg.ineq_multipliers is None else np.array(cfg.ineq_multipliers, dtype=float)
    if lam_eq.shape != (spec.dynamics.n,) or lam_in.shape != (prob.n_ineq,):
        raise SpecError("warm-start multipliers have the wrong length")
    rho = cfg.rho0

    def violation(meas):
        return max(meas["terminal_error"], meas["margin_violation"], meas["workspace"])

    prev_viol = violation(prob.measures(u))
    best = None
    inner_total = 0
    history = []
    converged = False
    prev_obj = None
    outer = 0
    for outer in range(1, max_outer + 1):
        u, _, n_inner, stationary = _inner(prob, u, lam_eq, lam_in, rho, cfg)
        inner_total += n_inner
        meas = prob.measures(u)
        viol = violation(meas)
        feasible = prob.feasible(meas)
        history.append(
            {
                "outer": outer,
                "rho": rho,
                "inner": n_inner,
                "objective": meas["objective"],
                "ergodic": meas["ergodic"],
                "violation": viol,
                "feasible": feasible,
            }
        )
        logger.debug("outer %d rho=%.3g obj=%.6g viol=%.3g feasible=%s", outer, rho, meas["objective"], viol, feasible)
        if feasible and (best is None or meas["objective"] < best[1]["objective"]):
            best = (u.copy(), meas)
        settled = prev_obj is not None and abs(prev_obj - meas["objective"]) <= cfg.settle_tol * max(abs(meas["objective"]), 1e-12)
        if feasible and (stationary or settled):
            converged = True
            break
        prev_obj = meas["objective"]

        lam_eq = lam_eq + rho * meas["eq"]
        if prob.n_ineq:
            lam_in = np.maximum(0.0, lam_in - rho * (meas["ineq"] - cfg.margin))
        if viol > 0.25 * prev_viol:
            rho = min(rho * cfg.rho_growth, cfg.rho_max)
        prev_viol = viol

    if best is None:
        best = (u, prob.measures(u))
    return {
        "u": best[0],
        "meas": best[1],
        "feasible": prob.feasible(best[1]),
        "converged": converged,
        "outer": outer,
        "inner": inner_total,
        "history": history,
    }


def solve(
    spec: ProblemSpec,
    cfg: Optional[SolverConfig] = None,
    init: Optional[np.ndarray] = None,
    warm_start: Optional[bool] = None,
) -> Solution:
    """Solve the (safety-critical) ergodic trajectory optimization problem.

    ``init`` overrides the default initial controls. The coverage warm start
    runs when ``warm_start`` is true; by default (``None``) it follows
    ``cfg.warm_start`` for the default initialization and is skipped for a
    caller-supplied ``init``.

    Never raises on non-convergence: the returned :class:`Solution` carries
    ``converged=False`` instead. When no feasible iterate was found the last
    iterate is returned.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    prob = _Problem(spec, cfg)
    if init is None:
        u = initialize(spec, cfg)
    else:
        u = np.array(init, dtype=float)
        if u.shape != (spec.T - 1, spec.dynamics.m):
            raise ValueError(f"init must have shape {(spec.T - 1, spec.dynamics.m)}, got {u.shape}")
        u = spec.dynamics.clip_controls(u)
    if warm_start is None:
        warm_start = cfg.warm_start and init is None
    if warm_start and prob.n_ineq:
        # coverage first, safety second: the constrained solve only has to
        # push an already exploratory path out of the obstacles
        u = _run_al(_Problem(spec.with_mode("none"), cfg), u, cfg, cfg.warm_outer)["u"]
    run = _run_al(prob, u, cfg, cfg.max_outer)
    meas = run["meas"]
    traj = rollout(spec.dynamics, spec.start, run["u"], spec.dt)
    safety = audit_points(spec.constraints, spec.dynamics.project(traj.states)) if spec.constraints else None
    return Solution(
        trajectory=traj,
        objective=meas["objective"],
        ergodic_metric=meas["ergodic"],
        control_cost=meas["control"],
        terminal_error=meas["terminal_error"],
        max_violation=max(0.0, -meas["true_min"]),
        workspace_violation=meas["workspace"],
        converged=run["converged"],
        outer_iterations=run["outer"],
        inner_iterations=run["inner"],
        seconds=time.perf_counter() - t0,
        mode=spec.mode,
        safety=safety,
        history=run["history"],
    )


def augmented_objective(spec: ProblemSpec, controls, cfg: Optional[SolverConfig] = None, lam_eq=None, lam_in=None, rho=None):
    """Augmented Lagrangian value and gradient at ``controls`` (used by :func:`grad_check`)."""
    cfg = cfg or SolverConfig()
    prob = _Problem(spec, cfg)
    lam_eq = np.zeros(spec.dynamics.n) if lam_eq is None else np.asarray(lam_eq, dtype=float)
    lam_in = np.zeros(prob.n_ineq) if lam_in is None else np.asarray(lam_in, dtype=float)
    return prob.evaluate(np.asarray(controls, dtype=float), lam_eq, lam_in, cfg.rho0 if rho is None else rho)


def grad_check(spec: ProblemSpec, controls, cfg: Optional[SolverConfig] = None, eps: float = 1e-6, lam_eq=None, lam_in=None, rho=None) -> float:
    """Max relative error between the analytic augmented-Lagrangian gradient and central differences.

    The relative error is taken against the gradient's max-abs entry, so
    components that are nearly zero do not dominate.
    """
    u = np.array(controls, dtype=float)
    _, g = augmented_objective(spec, u, cfg, lam_eq, lam_in, rho)
    fd = np.empty_like(u)
    for idx in np.ndindex(u.shape):
        old = u[idx]
        u[idx] = old + eps
        fp, _ = augmented_objective(spec, u, cfg, lam_eq, lam_in, rho)
        u[idx] = old - eps
        fm, _ = augmented_objective(spec, u, cfg, lam_eq, lam_in, rho)
        u[idx] = old
        fd[idx] = (fp - fm) / (2 * eps)
    scale = max(float(np.max(np.abs(fd))), 1e-12)
    return float(np.max(np.abs(fd - g)) / scale)
