"""Command-line entry point.

Subcommands::

    ergosafe plan       --scenario S --out DIR [--mode sc_eto|eto_plain_h|none]
    ergosafe fleet      --scenario S --out DIR
    ergosafe montecarlo --scenario S --out DIR [--trials N] [--seed K]
    ergosafe ablate     --scenario S --out DIR [--gammas 0.1,0.2,...]
    ergosafe grad-check --scenario S [--seed K]

``--scenario`` takes a JSON scenario file or a shipped scene name
(``default``, ``fleet``). Exit codes: 0 success, 1 usage or parse error,
2 the scenario describes an invalid problem (for example a start inside an
obstacle).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import Trajectory
from .harness import MonteCarloResult, default_gammas, run_gamma_ablation, run_monte_carlo
from .multirobot import min_pair_distance, solve_fleet
from .optimizer import ProblemSpec, Solution, SpecError, grad_check, initialize, solve
from .safety import VIOLATION_TOL, SafetyReport
from .scenario import MODE_NAMES, ScenarioError, load_scenario

logger = logging.getLogger("ergosafe")

EXIT_OK, EXIT_USAGE, EXIT_SPEC = 0, 1, 2


def _fmt(x: float) -> str:
    return "%.17g" % x


# --- file writers ------------------------------------------------------


def write_trajectories(path, trajectories: Sequence[Trajectory]) -> None:
    """One row per (time step, robot): ``t, robot_id, x..., u...``.

    The last state of a trajectory has no control; its control cells are
    left empty.
    """
    first = trajectories[0]
    n, m = first.states.shape[1], first.controls.shape[1]
    header = ["t", "robot_id"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in range(first.T):
            for r, traj in enumerate(trajectories):
                u = [_fmt(x) for x in traj.controls[t]] if t < traj.T - 1 else [""] * m
                w.writerow([_fmt(t * traj.dt), r] + [_fmt(x) for x in traj.states[t]] + u)


def read_trajectories(path) -> Dict[int, Trajectory]:
    rows: Dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = sum(1 for h in header if h.startswith("x"))
        for row in reader:
            rows.setdefault(int(row[1]), []).append(row)
    out = {}
    for r, rs in rows.items():
        t = np.array([float(x[0]) for x in rs])
        states = np.array([[float(v) for v in x[2 : 2 + n]] for x in rs])
        controls = np.array([[float(v) for v in x[2 + n :]] for x in rs[:-1]])
        out[r] = Trajectory(states, controls, float(t[1] - t[0]))
    return out


def _audit_dict(report: Optional[SafetyReport]) -> dict:
    if report is None:
        return {"passed": True, "constraints": []}
    return report.as_dict()


def solution_report(sol: Solution, mode: str) -> dict:
    d = sol.summary()
    d["mode"] = mode
    d["audit"] = _audit_dict(sol.safety)
    # plain safe-set membership, meaningful in every mode (DCBF residuals are not)
    d["min_h"] = sol.safety.min_h if sol.safety is not None else None
    d["in_safe_set"] = sol.safety is None or sol.safety.min_h >= -VIOLATION_TOL
    return d


def write_coverage(path, spec: ProblemSpec, traj: Trajectory) -> None:
    obj = spec.objective
    c = obj.coefficients(traj.states)
    modes = obj.basis.modes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"k{i}" for i in range(modes.shape[1])] + ["c_k", "phi_k", "abs_diff", "weight"])
        for j in range(modes.shape[0]):
            w.writerow(
                list(modes[j])
                + [_fmt(c[j]), _fmt(obj.target[j]), _fmt(abs(c[j] - obj.target[j])), _fmt(obj.weights[j])]
            )


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, default=float) + "\n")


TRIAL_FIELDS = [
    "trial",
    "mode",
    "start",
    "goal",
    "converged",
    "collided",
    "success",
    "min_h",
    "planned_min_h",
    "tracking_rms",
    "ergodic_metric",
    "first_violation_time",
    "first_violation_barrier",
]


def write_trials(path, result: MonteCarloResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_FIELDS)
        for r in result.trials:
            hits = [(t, label) for label, t in r.first_violation.items() if t is not None]
            first = min(hits) if hits else None
            w.writerow(
                [
                    r.trial,
                    r.mode,
                    " ".join(_fmt(x) for x in r.start),
                    " ".join(_fmt(x) for x in r.goal),
                    int(r.converged),
                    int(r.collided),
                    int(r.success),
                    _fmt(r.min_h),
                    _fmt(r.planned_min_h),
                    _fmt(r.tracking_rms),
                    _fmt(r.ergodic_metric),
                    "" if first is None else _fmt(first[0]),
                    "" if first is None else first[1],
                ]
            )


def write_summary(path, result: MonteCarloResult) -> None:
    rows = result.summary()
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in row.items()})


# --- subcommands -------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_plan(args) -> int:
    sc = load_scenario(args.scenario)
    if len(sc.robots) != 1:
        raise ScenarioError(f"{args.scenario}: robots: plan takes one robot, found {len(sc.robots)}; use 'fleet'")
    mode = args.mode or sc.mode
    spec = sc.problem(0, mode, args.modes_per_dim)
    sol = solve(spec, sc.solver_config(args.seed))
    out = _out_dir(args)
    write_trajectories(out / "trajectory.csv", [sol.trajectory])
    report = solution_report(sol, mode)
    report["scenario"] = sc.name
    _write_json(out / "report.json", report)
    write_coverage(out / "coverage.csv", spec, sol.trajectory)
    print(f"{mode}: metric={sol.ergodic_metric:.6g} converged={sol.converged} audit={'pass' if report['audit']['passed'] else 'FAIL'}")
    return EXIT_OK


def cmd_fleet(args) -> int:
    sc = load_scenario(args.scenario)
    mode = args.mode or sc.mode
    fleet = sc.fleet(mode, args.modes_per_dim)
    res = solve_fleet(fleet, sc.solver_config(args.seed))
    out = _out_dir(args)
    write_trajectories(out / "trajectory.csv", [s.trajectory for s in res.robots])
    report = solution_report(res.joint, mode)
    report["scenario"] = sc.name
    report["robots"] = [solution_report(s, mode) for s in res.robots]
    report["pairs"] = len(fleet.pairs)
    report["d_min"] = sc.d_min
    report["min_pair_distance"] = min_pair_distance(fleet, res.joint.trajectory) if fleet.n_robots > 1 else None
    _write_json(out / "report.json", report)
    write_coverage(out / "coverage.csv", res.stacked, res.joint.trajectory)
    print(f"{mode}: joint metric={res.joint.ergodic_metric:.6g} converged={res.joint.converged} audit={'pass' if report['audit']['passed'] else 'FAIL'}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    sc = load_scenario(args.scenario)
    spec = sc.problem(0, "sc_eto", args.modes_per_dim)
    seed = sc.seed if args.seed is None else args.seed
    result = run_monte_carlo(spec, args.trials, seed=seed, cfg=sc.solver_config(seed))
    out = _out_dir(args)
    write_trials(out / "trials.csv", result)
    write_summary(out / "summary.csv", result)
    for row in result.summary():
        print(
            f"{row['mode']}: success {row['success_pct']:.1f}% "
            f"({row['converged']}/{row['trials']} converged, {row['collisions']} collisions)"
        )
    return EXIT_OK


def _parse_gammas(text: Optional[str]) -> List[float]:
    if not text:
        return default_gammas()
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ScenarioError(f"--gammas: expected comma-separated numbers, got {text!r}") from None


def cmd_ablate(args) -> int:
    sc = load_scenario(args.scenario)
    gammas = _parse_gammas(args.gammas)
    bad = [g for g in gammas if not (0.0 < g <= 1.0)]
    if bad:
        raise ScenarioError(f"--gammas: values must lie in (0, 1], got {bad}")
    spec = sc.problem(0, "sc_eto", args.modes_per_dim)
    res = run_gamma_ablation(spec, gammas, sc.solver_config(args.seed))
    out = _out_dir(args)
    with open(out / "gamma_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma", "metric", "min_h", "converged"])
        for row in res.rows():
            w.writerow([_fmt(row["gamma"]), _fmt(row["metric"]), _fmt(row["min_h"]), int(row["converged"])])
    for g, sol in zip(res.gammas, res.solutions):
        write_trajectories(out / f"trajectory_gamma_{g:g}.csv", [sol.trajectory])
    for row in res.rows():
        print(f"gamma={row['gamma']:g} metric={row['metric']:.6g} min_h={row['min_h']:.4g} converged={row['converged']}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    sc = load_scenario(args.scenario)
    spec = sc.problem(0, args.mode or sc.mode, args.modes_per_dim)
    cfg = sc.solver_config(args.seed)
    rng = np.random.default_rng(cfg.seed)
    u = initialize(spec, cfg) + 0.05 * rng.standard_normal((spec.T - 1, spec.dynamics.m))
    err = grad_check(spec, u, cfg)
    print(f"max relative gradient error: {err:.3e}")
    return EXIT_OK


COMMANDS = {
    "plan": cmd_plan,
    "fleet": cmd_fleet,
    "montecarlo": cmd_montecarlo,
    "ablate": cmd_ablate,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergosafe", description="Safety-critical ergodic trajectory optimization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--scenario", required=True, help="scenario JSON file or shipped scene name")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--modes-per-dim", type=int, default=None, help="Fourier modes per dimension")

    for name in ("plan", "fleet", "grad-check"):
        p = sub.add_parser(name)
        common(p, out=name != "grad-check")
        p.add_argument("--mode", choices=sorted(MODE_NAMES), default=None)
    p = sub.add_parser("montecarlo")
    common(p)
    p.add_argument("--trials", type=int, default=20)
    p = sub.add_parser("ablate")
    common(p)
    p.add_argument("--gammas", default=None, help="comma-separated decay rates in (0, 1]")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if getattr(args, "trials", 1) < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.modes_per_dim is not None and args.modes_per_dim < 1:
        print("error: --modes-per-dim must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
