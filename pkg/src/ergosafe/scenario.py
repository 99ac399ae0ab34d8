"""Scenario files: JSON descriptions of a workspace, obstacles and robots.

A scenario looks like::

    {
      "name": "default",
      "workspace": [1.0, 1.0],
      "obstacles": [{"center": [0.25, 0.25], "scale": [0.08, 0.08],
                     "buffer": 0.03, "radius": 1.0, "p": 2, "name": "obs0"}],
      "robots": [{"start": [0.05, 0.05], "goal": [0.95, 0.95]}],
      "measure": {"kind": "uniform"},
      "gamma": 0.1, "T": 200, "dt": 0.1, "modes_per_dim": 10,
      "u_max": 0.3, "control_weight": 0.01, "d_min": 0.1,
      "mode": "sc_eto", "seed": 0, "solver": {"max_outer": 12}
    }

Only ``workspace`` and ``robots`` are required. A grid measure is
``{"kind": "grid", "path": "density.txt"}`` with the path relative to the
scenario file. ``pairs`` (fleet only) lists robot index pairs and defaults
to all pairs.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .core import Workspace, single_integrator
from .ergodic import ErgodicObjective
from .multirobot import FleetSpec
from .optimizer import ProblemSpec, SolverConfig
from .safety import DcbfConstraint, Superellipsoid
from .spectral import FourierBasis, SpatialMeasure, load_grid_measure

# command-line mode names and the optimizer's inequality modes
MODE_NAMES = {"sc_eto": "dcbf", "eto_plain_h": "plain_h", "none": "none"}
SHIPPED = ("default", "fleet")


class ScenarioError(ValueError):
    """A scenario file cannot be parsed; the message names the file and field."""


@dataclass
class Obstacle:
    center: List[float]
    scale: List[float]
    buffer: float = 0.0
    radius: float = 1.0
    p: float = 2.0
    name: str = ""

    def barrier(self) -> Superellipsoid:
        return Superellipsoid(self.center, self.scale, self.buffer, self.radius, self.p, self.name)


@dataclass
class Robot:
    start: List[float]
    goal: List[float]


@dataclass
class Scenario:
    workspace: List[float]
    robots: List[Robot]
    obstacles: List[Obstacle] = field(default_factory=list)
    measure: Dict[str, Any] = field(default_factory=lambda: {"kind": "uniform"})
    name: str = ""
    gamma: float = 0.1
    T: int = 200
    dt: float = 0.1
    modes_per_dim: int = 10
    u_max: Optional[float] = None
    control_weight: float = 0.01
    d_min: float = 0.1
    pairs: Optional[List[List[int]]] = None
    mode: str = "sc_eto"
    seed: int = 0
    solver: Dict[str, Any] = field(default_factory=dict)
    # directory that relative measure paths resolve against; not serialized
    base_dir: Optional[str] = field(default=None, compare=False)

    # --- builders -----------------------------------------------------

    def workspace_obj(self) -> Workspace:
        return Workspace(tuple(self.workspace))

    def spatial_measure(self) -> SpatialMeasure:
        ws = self.workspace_obj()
        if self.measure.get("kind", "uniform") == "uniform":
            return SpatialMeasure.uniform()
        path = Path(self.measure["path"])
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        try:
            return load_grid_measure(path, ws)
        except OSError as exc:
            raise ScenarioError(f"measure.path: cannot read {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ScenarioError(f"measure.path: {exc}") from None

    def solver_config(self, seed: Optional[int] = None) -> SolverConfig:
        return dataclasses.replace(SolverConfig(), **self.solver, seed=self.seed if seed is None else int(seed))

    def problem(self, robot: int = 0, mode: Optional[str] = None, modes_per_dim: Optional[int] = None) -> ProblemSpec:
        """Single-robot problem for ``robot``; ``mode`` takes command-line names."""
        ws = self.workspace_obj()
        basis = FourierBasis(ws, modes_per_dim or self.modes_per_dim)
        obj = ErgodicObjective.from_measure(basis, self.spatial_measure())
        cons = [DcbfConstraint(o.barrier(), self.gamma) for o in self.obstacles]
        r = self.robots[robot]
        return ProblemSpec(
            dynamics=single_integrator(ws.dim, self.u_max),
            workspace=ws,
            objective=obj,
            start=r.start,
            goal=r.goal,
            constraints=cons,
            mode=MODE_NAMES[mode or self.mode],
            T=self.T,
            dt=self.dt,
            R=self.control_weight * np.eye(ws.dim),
        )

    def fleet(self, mode: Optional[str] = None, modes_per_dim: Optional[int] = None) -> FleetSpec:
        robots = [self.problem(r, mode, modes_per_dim) for r in range(len(self.robots))]
        return FleetSpec.connect(robots, self.d_min, self.gamma, self.pairs)


def _fail(source: str, where: str, msg: str):
    raise ScenarioError(f"{source}: {where}: {msg}")


def _vector(value, where: str, source: str, dim: Optional[int] = None) -> List[float]:
    if not isinstance(value, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        _fail(source, where, f"expected a list of numbers, got {value!r}")
    if dim is not None and len(value) != dim:
        _fail(source, where, f"expected {dim} entries, got {len(value)}")
    return [float(x) for x in value]


def _number(value, where: str, source: str, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(source, where, f"expected a number, got {value!r}")
    if kind is int and float(value) != int(value):
        _fail(source, where, f"expected an integer, got {value!r}")
    return kind(value)


def _keys(d: dict, allowed: Sequence[str], required: Sequence[str], where: str, source: str):
    if not isinstance(d, dict):
        _fail(source, where, f"expected an object, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            _fail(source, f"{where}.{k}" if where else k, "unknown field")
    for k in required:
        if k not in d:
            _fail(source, where or "scenario", f"missing required field {k!r}")


_TOP = [f.name for f in dataclasses.fields(Scenario) if f.name != "base_dir"]
_SOLVER = [f.name for f in dataclasses.fields(SolverConfig) if f.name != "seed"]


def scenario_from_dict(d: dict, source: str = "<scenario>", base_dir: Optional[str] = None) -> Scenario:
    _keys(d, _TOP, ["workspace", "robots"], "", source)
    ws = _vector(d["workspace"], "workspace", source)
    try:
        Workspace(tuple(ws))
    except ValueError as exc:
        _fail(source, "workspace", str(exc))
    v = len(ws)

    obstacles = []
    raw = d.get("obstacles", [])
    if not isinstance(raw, list):
        _fail(source, "obstacles", "expected a list")
    for i, o in enumerate(raw):
        where = f"obstacles[{i}]"
        _keys(o, ["center", "scale", "buffer", "radius", "p", "name"], ["center", "scale"], where, source)
        ob = Obstacle(
            center=_vector(o["center"], f"{where}.center", source, v),
            scale=_vector(o["scale"], f"{where}.scale", source, v),
            buffer=_number(o.get("buffer", 0.0), f"{where}.buffer", source),
            radius=_number(o.get("radius", 1.0), f"{where}.radius", source),
            p=_number(o.get("p", 2.0), f"{where}.p", source),
            name=str(o.get("name", f"obs{i}")),
        )
        try:
            ob.barrier()
        except ValueError as exc:
            _fail(source, where, str(exc))
        obstacles.append(ob)

    robots = []
    if not isinstance(d["robots"], list) or not d["robots"]:
        _fail(source, "robots", "expected a non-empty list")
    for i, r in enumerate(d["robots"]):
        where = f"robots[{i}]"
        _keys(r, ["start", "goal"], ["start", "goal"], where, source)
        robots.append(Robot(_vector(r["start"], f"{where}.start", source, v), _vector(r["goal"], f"{where}.goal", source, v)))

    measure = d.get("measure", {"kind": "uniform"})
    _keys(measure, ["kind", "path"], ["kind"], "measure", source)
    if measure["kind"] not in ("uniform", "grid"):
        _fail(source, "measure.kind", f"expected 'uniform' or 'grid', got {measure['kind']!r}")
    if measure["kind"] == "grid" and not isinstance(measure.get("path"), str):
        _fail(source, "measure.path", "a grid measure needs a file path")

    sc = Scenario(workspace=ws, robots=robots, obstacles=obstacles, measure=dict(measure), base_dir=base_dir)
    sc.name = str(d.get("name", ""))
    sc.gamma = _number(d.get("gamma", sc.gamma), "gamma", source)
    if not (0.0 < sc.gamma <= 1.0):
        _fail(source, "gamma", f"must lie in (0, 1], got {sc.gamma}")
    sc.T = _number(d.get("T", sc.T), "T", source, int)
    if sc.T < 2:
        _fail(source, "T", "must be >= 2")
    sc.dt = _number(d.get("dt", sc.dt), "dt", source)
    if not sc.dt > 0:
        _fail(source, "dt", "must be positive")
    sc.modes_per_dim = _number(d.get("modes_per_dim", sc.modes_per_dim), "modes_per_dim", source, int)
    if sc.modes_per_dim < 1:
        _fail(source, "modes_per_dim", "must be >= 1")
    if d.get("u_max") is not None:
        sc.u_max = _number(d["u_max"], "u_max", source)
        if not sc.u_max > 0:
            _fail(source, "u_max", "must be positive")
    sc.control_weight = _number(d.get("control_weight", sc.control_weight), "control_weight", source)
    if sc.control_weight < 0:
        _fail(source, "control_weight", "must be non-negative")
    sc.d_min = _number(d.get("d_min", sc.d_min), "d_min", source)
    if not sc.d_min > 0:
        _fail(source, "d_min", "must be positive")
    if d.get("pairs") is not None:
        pairs = d["pairs"]
        if not isinstance(pairs, list):
            _fail(source, "pairs", "expected a list of [i, j] pairs")
        sc.pairs = []
        for k, p in enumerate(pairs):
            if not (isinstance(p, list) and len(p) == 2 and all(isinstance(x, int) and not isinstance(x, bool) for x in p)):
                _fail(source, f"pairs[{k}]", f"expected [i, j] robot indices, got {p!r}")
            if not all(0 <= x < len(robots) for x in p) or p[0] == p[1]:
                _fail(source, f"pairs[{k}]", f"needs two distinct robots in 0..{len(robots) - 1}")
            sc.pairs.append([int(p[0]), int(p[1])])
    sc.mode = d.get("mode", sc.mode)
    if sc.mode not in MODE_NAMES:
        _fail(source, "mode", f"expected one of {sorted(MODE_NAMES)}, got {sc.mode!r}")
    sc.seed = _number(d.get("seed", sc.seed), "seed", source, int)
    solver = d.get("solver", {})
    _keys(solver, _SOLVER, [], "solver", source)
    sc.solver = dict(solver)
    try:
        SolverConfig(**sc.solver)
    except TypeError as exc:
        _fail(source, "solver", str(exc))
    return sc


def scenario_to_dict(sc: Scenario) -> dict:
    d = {
        "name": sc.name,
        "workspace": list(sc.workspace),
        "obstacles": [dataclasses.asdict(o) for o in sc.obstacles],
        "robots": [dataclasses.asdict(r) for r in sc.robots],
        "measure": dict(sc.measure),
        "gamma": sc.gamma,
        "T": sc.T,
        "dt": sc.dt,
        "modes_per_dim": sc.modes_per_dim,
        "u_max": sc.u_max,
        "control_weight": sc.control_weight,
        "d_min": sc.d_min,
        "pairs": sc.pairs,
        "mode": sc.mode,
        "seed": sc.seed,
        "solver": dict(sc.solver),
    }
    return d


_NUMBER_LIST = re.compile(r"\[\s*([-0-9.eE+,\s]+?)\s*\]")


def dumps_scenario(sc: Scenario) -> str:
    text = json.dumps(scenario_to_dict(sc), indent=2)
    # keep coordinate lists on one line
    text = _NUMBER_LIST.sub(lambda m: "[" + ", ".join(x.strip() for x in m.group(1).split(",")) + "]", text)
    return text + "\n"


def loads_scenario(text: str, source: str = "<scenario>", base_dir: Optional[str] = None) -> Scenario:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return scenario_from_dict(d, source, base_dir)


def load_scenario(path) -> Scenario:
    """Read a scenario file, or a shipped scene by name (``default``, ``fleet``)."""
    p = Path(path)
    if not p.exists() and str(path) in SHIPPED:
        return shipped_scenario(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    return loads_scenario(text, str(path), str(p.parent))


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(sc))


def shipped_scenario(name: str) -> Scenario:
    if name not in SHIPPED:
        raise ScenarioError(f"no shipped scene {name!r}; choose from {SHIPPED}")
    text = resources.files("ergosafe").joinpath("scenes", f"{name}.json").read_text()
    return loads_scenario(text, f"<shipped:{name}>")


def random_scenario(seed: int, n_obstacles: int = 4, gamma: float = 0.3) -> Scenario:
    """Unit-square scene with random circular and boxy obstacles.

    Obstacles keep clear of the start ``(0.05, 0.05)`` and goal
    ``(0.95, 0.95)`` corners so the boundary conditions are always safe.
    """
    rng = np.random.default_rng(seed)
    start, goal = [0.05, 0.05], [0.95, 0.95]
    obstacles: List[Obstacle] = []
    while len(obstacles) < n_obstacles:
        c = rng.uniform(0.15, 0.85, size=2)
        s = rng.uniform(0.04, 0.09, size=2)
        ob = Obstacle(c.tolist(), s.tolist(), 0.02, 1.0, float(rng.choice([2, 4])), f"obs{len(obstacles)}")
        bar = ob.barrier()
        if min(float(bar.value(np.array(start))), float(bar.value(np.array(goal)))) < 0.5:
            continue
        obstacles.append(ob)
    return Scenario(
        workspace=[1.0, 1.0],
        robots=[Robot(start, goal)],
        obstacles=obstacles,
        name=f"random-{seed}",
        gamma=gamma,
        u_max=0.3,
        seed=int(seed),
    )
