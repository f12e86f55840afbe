"""Command-line interface.

Every subcommand reads JSON inputs, writes JSON (and optionally CSV)
artifacts with floats at 17 significant digits, and exits with 0 on
success, 2 on invalid input and 1 on a numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arcstats import CrossingExperiment, shortening_experiment
from .dynamics import ControlProblem, GridSpec, IntegrationError, Schedule, propagate_pair, propagate_state
from .opensys import (
    ConstantSpectralDensity,
    CorrelationSpec,
    GAMEModel,
    JointModel,
    OhmicSpectralDensity,
    RedfieldModel,
)
from .operators import as_matrix, ground_state, ising_problem, is_hermitian
from .optimize import GradientCheckError, OptimizeConfig, optimize_discretized, optimize_switch_times
from .pmp import pmp_records
from .qubit import (
    EXCITED_START,
    GROUND_START,
    bloch_propagate,
    bloch_vector,
    delta_recursion_check,
    optimal_bangbang,
    qubit_problem,
    random_schedules,
    small_time_sign_check,
    switch_return_time,
)
from .reachability import block_reachability, generate_lie_algebra

EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    """Invalid command-line input; the message names the offending field."""


# ---------------------------------------------------------------------------
# serialization


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def format_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON with sorted keys and 17-significant-digit floats."""
    obj = _plain(obj)
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {dumps(v, indent, _level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent, _level + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, float):
        return format_float(obj)
    return json.dumps(obj)


def write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue())


def matrix_to_json(m) -> list:
    m = as_matrix(m)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


# ---------------------------------------------------------------------------
# input parsing


def _load_json(path: str, what: str):
    try:
        text = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{what}: cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise InputError(f"{what}: invalid JSON in {path}: {exc}") from None


def parse_matrix(data, field: str) -> np.ndarray:
    """Nested rows of ``[re, im]`` pairs or of real numbers."""
    try:
        arr = np.asarray(data, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{field}: matrix entries must be numbers or [re, im] pairs") from None
    if arr.ndim == 3 and arr.shape[2] == 2:
        arr = arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InputError(f"{field}: expected a square matrix")
    return arr.astype(complex)


def _hamiltonians(data: dict, where: str):
    if "n" in data:
        try:
            b, c = ising_problem(
                int(data["n"]), data.get("h"), [tuple(x) for x in data.get("J", [])], data.get("driver", "transverse")
            )
        except (ValueError, TypeError) as exc:
            raise InputError(f"{where}: Ising shorthand: {exc}") from None
        return b.matrix, c.matrix
    for key in ("B", "C"):
        if key not in data:
            raise InputError(f"{where}: missing field '{key}'")
    b, c = parse_matrix(data["B"], f"{where}.B"), parse_matrix(data["C"], f"{where}.C")
    for key, m in (("B", b), ("C", c)):
        if not is_hermitian(m):
            raise InputError(f"{where}.{key}: matrix is not Hermitian")
    if b.shape != c.shape:
        raise InputError(f"{where}.C: shape {c.shape} differs from B {b.shape}")
    return b, c


def _initial_state(data: dict, b: np.ndarray, where: str) -> np.ndarray:
    rho0 = data.get("rho0", "driver_ground")
    if rho0 == "driver_ground":
        try:
            return ground_state(b)
        except ValueError as exc:
            raise InputError(f"{where}.rho0: {exc}") from None
    if isinstance(rho0, dict) and "bloch" in rho0:
        v = np.asarray(rho0["bloch"], dtype=float)
        if v.shape != (3,) or b.shape != (2, 2):
            raise InputError(f"{where}.rho0.bloch: needs 3 components and a qubit problem")
        return 0.5 * (np.eye(2) + v[0] * np.array([[0, 1], [1, 0]]) + v[1] * np.array([[0, -1j], [1j, 0]])
                      + v[2] * np.diag([1.0, -1.0]))
    return parse_matrix(rho0, f"{where}.rho0")


def _model(data: dict, b, c, where: str):
    kind = data.get("kind", "closed")
    if kind == "closed":
        return None
    couplings = data.get("couplings", [])
    try:
        if kind == "joint":
            pairs = [(parse_matrix(x["S"], f"{where}.couplings[{k}].S"), parse_matrix(x["E"], f"{where}.couplings[{k}].E"))
                     for k, x in enumerate(couplings)]
            for key in ("H_E", "rho_E"):
                if key not in data:
                    raise InputError(f"{where}: missing field '{key}'")
            return JointModel(b, c, pairs, parse_matrix(data["H_E"], f"{where}.H_E"),
                              parse_matrix(data["rho_E"], f"{where}.rho_E"), cap=int(data.get("cap", 64)))
        ops = [parse_matrix(x["S"] if isinstance(x, dict) else x, f"{where}.couplings[{k}]") for k, x in enumerate(couplings)]
        if kind == "redfield":
            if "kernel" not in data:
                raise InputError(f"{where}: missing field 'kernel'")
            kern = data["kernel"]
            spec = CorrelationSpec(float(kern["g"]), float(kern["tau_B"]), float(kern.get("omega0", 0.0)))
            t_max = float(data.get("t_max", math.inf))
            return RedfieldModel(b, c, ops, spec, t_max=t_max)
        if kind == "game":
            if "gamma" not in data:
                raise InputError(f"{where}: missing field 'gamma'")
            g = data["gamma"]
            if g.get("type") == "ohmic":
                p = g.get("params", {})
                gamma = OhmicSpectralDensity(float(p["eta"]), float(p["omega_c"]), float(p["beta"]))
            elif g.get("type") == "constant":
                gamma = ConstantSpectralDensity(float(g.get("value", g.get("params", {}).get("value"))))
            else:
                raise InputError(f"{where}.gamma.type: expected 'ohmic' or 'constant'")
            return GAMEModel(b, c, ops, gamma)
    except KeyError as exc:
        raise InputError(f"{where}: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{where}: {exc}") from None
    raise InputError(f"{where}.kind: expected closed, joint, redfield or game")


def load_problem(path: str, t_f: float | None, hashes: list) -> ControlProblem:
    data, raw = _load_json(path, "problem")
    hashes.append(raw)
    if not isinstance(data, dict):
        raise InputError("problem: top level must be an object")
    b, c = _hamiltonians(data, "problem")
    rho0 = _initial_state(data, b, "problem")
    if t_f is None:
        if "t_f" not in data:
            raise InputError("problem.t_f: missing (or pass --tf)")
        t_f = float(data["t_f"])
    model = _model(data, b, c, "problem")
    try:
        if model is None:
            return ControlProblem(b, c, rho0, t_f)
        return ControlProblem.for_model(model, rho0, t_f)
    except ValueError as exc:
        raise InputError(f"problem: {exc}") from None


def load_schedule(path: str, hashes: list) -> Schedule:
    data, raw = _load_json(path, "schedule")
    hashes.append(raw)
    try:
        return Schedule.from_json(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"schedule: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def _trajectory_rows(problem, traj):
    cost = traj.expectation(problem.cost_operator)
    return zip(traj.grid, traj.s_values, cost, traj.traces, traj.purities, traj.min_eigs)


TRAJECTORY_HEADER = ("t", "s", "J", "trace", "purity", "min_eig")


def _with_tf(problem: ControlProblem, schedule: Schedule) -> ControlProblem:
    if abs(schedule.t_f - problem.t_f) > 1e-12 * max(1.0, problem.t_f):
        problem = problem.with_tf(schedule.t_f)
    return problem


def cmd_simulate(args, hashes):
    problem = load_problem(args.problem, args.tf, hashes)
    schedule = load_schedule(args.schedule, hashes)
    problem = _with_tf(problem, schedule)
    traj = propagate_state(problem, schedule, GridSpec(n_out=args.points))
    out = {
        "kind": problem.kind,
        "t_f": problem.t_f,
        "final_cost": float(traj.expectation(problem.cost_operator)[-1]),
        "trace_drift": float(np.max(np.abs(traj.traces - 1.0))),
        "min_eig": float(traj.min_eigs.min()),
        "final_purity": float(traj.purities[-1]),
    }
    if args.trace:
        write_csv(args.trace, TRAJECTORY_HEADER, _trajectory_rows(problem, traj))
    return out


def _result_json(res, problem):
    out = {
        "mode": res.mode,
        "t_f": problem.t_f,
        "cost": res.cost,
        "lambda": res.lambda_,
        "lambda_residual": res.lambda_residual,
        "pmp_consistency": res.pmp_consistency,
        "converged": res.converged,
        "restarts_used": res.restarts_used,
        "iterations": res.iterations,
        "schedule": res.schedule.to_json(),
        "switch_times": res.switch_times,
    }
    if res.switch_times:
        out["switch_time"] = res.switch_times[0]
    cls = res.classification
    if cls is not None:
        out["arcs"] = [{"start": a, "end": b, "label": lab} for a, b, lab in cls.intervals]
    return out


def cmd_optimize(args, hashes):
    problem = load_problem(args.problem, args.tf, hashes)
    config = OptimizeConfig(restarts=args.restarts, seed=args.seed, grid=GridSpec(n_out=args.points))
    if args.mode == "bangs":
        if not problem.is_affine:
            raise InputError("mode: 'bangs' needs a closed or joint problem; use --mode grid")
        res = optimize_switch_times(problem, n_arcs=args.arcs, config=config)
    else:
        res = optimize_discretized(problem, args.grid, config=config)
    if args.trace and res.report is not None:
        write_csv(args.trace, TRAJECTORY_HEADER, _trajectory_rows(problem, res.report.trajectory))
    return _result_json(res, problem)


def _report_json(report):
    out = {
        "cost": report.cost,
        "lambda": report.lambda_,
        "lambda_residual": report.lambda_residual,
        "terminal_costate_error": report.terminal_costate_error,
        "pairing_drift": report.pairing_drift,
        "arc_residuals": report.arc_residuals(),
    }
    if report.problem.is_affine:
        out["identity_residual"] = report.identity_residual
        out["x_B_initial"] = float(report.x_B[0])
        out["x_C_final"] = float(report.x_C[-1])
    cls = report.classification
    if cls is not None:
        out["arcs"] = [{"start": a, "end": b, "label": lab} for a, b, lab in cls.intervals]
        out["consistency"] = cls.consistency
    return out


def cmd_pmp_report(args, hashes):
    problem = load_problem(args.problem, args.tf, hashes)
    schedule = load_schedule(args.schedule, hashes)
    problem = _with_tf(problem, schedule)
    return _report_json(pmp_records(problem, schedule, GridSpec(n_out=args.points)))


def cmd_switching_diagram(args, hashes):
    problem = load_problem(args.problem, args.tf, hashes)
    schedule = load_schedule(args.schedule, hashes)
    problem = _with_tf(problem, schedule)
    report = pmp_records(problem, schedule, GridSpec(n_out=args.points))
    write_csv(args.csv, ("t", "x_C", "x_B", "s", "label"), report.diagram_rows())
    return _report_json(report)


def cmd_open_sim(args, hashes):
    problem = load_problem(args.model, args.tf, hashes)
    schedule = load_schedule(args.schedule, hashes)
    problem = _with_tf(problem, schedule)
    traj, cost_traj = propagate_pair(problem, schedule, GridSpec(n_out=args.points))
    pairing = np.einsum("ij,ij->i", cost_traj.coords, traj.coords)
    out = {
        "kind": problem.kind,
        "t_f": problem.t_f,
        "final_cost": float(traj.expectation(problem.cost_operator)[-1]),
        "trace_drift": float(np.max(np.abs(traj.traces - 1.0))),
        "min_eig": float(traj.min_eigs.min()),
        "pairing_drift": float(np.max(np.abs(pairing - pairing[-1]))),
    }
    if args.trace:
        write_csv(args.trace, TRAJECTORY_HEADER, _trajectory_rows(problem, traj))
    return out


def cmd_lie(args, hashes):
    data, raw = _load_json(args.problem, "problem")
    hashes.append(raw)
    b, c = _hamiltonians(data, "problem")
    if args.projector:
        pdata, praw = _load_json(args.projector, "projector")
        hashes.append(praw)
        p = parse_matrix(pdata.get("P0", pdata) if isinstance(pdata, dict) else pdata, "projector.P0")
        try:
            res = block_reachability(b, c, p)
        except ValueError as exc:
            raise InputError(f"projector: {exc}") from None
        return {k: res[k] for k in ("verdict", "d0", "commutator_B", "commutator_C", "dimension", "full_su") if k in res}
    closure = generate_lie_algebra(b, c)
    return {
        "dimension": closure.dimension,
        "full_su": closure.full_su,
        "converged": closure.converged,
        "depth_reached": closure.depth_reached,
        "verdict": "controllable" if closure.full_su else "not controllable",
    }


def qubit_oracle_suite(seed: int = 0) -> dict:
    """Closed-form single-qubit checks; ``passed`` is their conjunction."""
    checks = {}
    for frac in (0.5, 0.75, 0.95):
        t_f = frac * math.pi
        sched, cost = optimal_bangbang(t_f)
        problem = qubit_problem(t_f)
        bt = bloch_propagate(GROUND_START, sched, problem=problem)
        traj = propagate_state(problem, sched)
        mismatch = float(np.abs(bloch_vector(traj.final_state) - bt.final).max())
        checks[f"bangbang_{frac}pi"] = {
            "cost": cost,
            "bloch_cost": float(bt.final[2] / 2),
            "bloch_density_mismatch": mismatch,
            "passed": mismatch < 1e-10 and abs(bt.final[2] / 2 - cost) < 1e-12,
        }
    rng = np.random.default_rng(seed)
    schedules = random_schedules(200, 0.05, rng)
    for name, v0 in (("excited", EXCITED_START), ("ground", GROUND_START)):
        checks[f"small_time_{name}"] = small_time_sign_check(v0, schedules, 0.05)
    a = 0.7
    rec = delta_recursion_check(1.0, -math.sin(a), (a, a))
    checks["delta_recursion"] = {"final_ok": rec["final_ok"], "consistent": rec["consistent"],
                                 "passed": bool(rec["final_ok"] and rec["consistent"])}
    rt = switch_return_time(1.0)
    checks["singular_return_time"] = {"value": rt, "passed": rt is not None and abs(rt - 2 * math.pi) < 1e-9}
    return {"checks": checks, "passed": all(v["passed"] for v in checks.values())}


def cmd_qubit_oracle(args, hashes):
    if args.check_all:
        return qubit_oracle_suite(args.seed)
    if args.tf is None:
        raise InputError("tf: required unless --check-all is given")
    if not args.tf > 0:
        raise InputError("tf: must be positive")
    sched, cost = optimal_bangbang(args.tf)
    bt = bloch_propagate(GROUND_START, sched)
    return {
        "t_f": args.tf,
        "switch_time": sched.breakpoints()[-2],
        "cost": cost,
        "bloch_endpoint": bt.final,
        "schedule": sched.to_json(),
    }


def cmd_arc_stats(args, hashes):
    if not 1 <= args.nmin <= args.nmax:
        raise InputError("nmin/nmax: need 1 <= nmin <= nmax")
    exp = CrossingExperiment(
        n_range=tuple(range(args.nmin, args.nmax + 1)),
        instances_per_n=args.samples,
        seed=args.seed,
        lambda_fraction=args.fraction,
        S0_policy=args.s0_policy,
        swap_roles=args.swap_roles,
    )
    table = shortening_experiment(exp)
    if args.out and args.out.lower().endswith(".csv"):
        # a CSV --out receives the table; the JSON summary goes to stdout
        args.csv, args.out = args.csv or args.out, None
    if args.csv:
        write_csv(args.csv, table.COLUMNS, table.as_rows())
    return {
        "rows": table.rows,
        "rank_correlation": table.rank_correlation,
        "rank_pvalue": table.rank_pvalue,
        "pooled_rank_correlation": table.pooled_rank_correlation,
    }


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpmp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--out", help="JSON output file (default: stdout)")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        return p

    def grid(p):
        p.add_argument("--points", type=int, default=2001, help="output grid points")

    p = common(sub.add_parser("simulate", help="propagate a state under a schedule"))
    p.add_argument("--problem", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--tf", type=float)
    p.add_argument("--trace", help="trajectory CSV")
    grid(p)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("optimize", help="optimize a schedule"))
    p.add_argument("--problem", required=True)
    p.add_argument("--tf", type=float)
    p.add_argument("--mode", choices=("bangs", "grid"), default="bangs")
    p.add_argument("--arcs", type=int, default=2)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--restarts", type=int, default=16)
    p.add_argument("--trace", help="trajectory CSV")
    grid(p)
    p.set_defaults(func=cmd_optimize)

    p = common(sub.add_parser("pmp-report", help="maximum-principle certificate for a schedule"))
    p.add_argument("--problem", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--tf", type=float)
    grid(p)
    p.set_defaults(func=cmd_pmp_report)

    p = common(sub.add_parser("switching-diagram", help="export t, x_C, x_B, s, label"))
    p.add_argument("--problem", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--tf", type=float)
    p.add_argument("--csv", required=True)
    grid(p)
    p.set_defaults(func=cmd_switching_diagram)

    p = common(sub.add_parser("open-sim", help="propagate an open-system model"))
    p.add_argument("--model", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--tf", type=float)
    p.add_argument("--trace", help="trajectory CSV")
    grid(p)
    p.set_defaults(func=cmd_open_sim)

    p = common(sub.add_parser("lie", help="dynamical Lie algebra dimension"))
    p.add_argument("--problem", required=True)
    p.add_argument("--projector")
    p.set_defaults(func=cmd_lie)

    p = common(sub.add_parser("qubit-oracle", help="closed-form single-qubit optimum"))
    p.add_argument("--tf", type=float)
    p.add_argument("--check-all", action="store_true")
    p.set_defaults(func=cmd_qubit_oracle)

    p = common(sub.add_parser("arc-stats", help="first-crossing ensemble statistics"))
    p.add_argument("--nmin", type=int, default=2)
    p.add_argument("--nmax", type=int, default=5)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--s0-policy", choices=("costate", "traceless"), default="costate")
    p.add_argument("--swap-roles", action="store_true")
    p.add_argument("--csv", help="table CSV (n, median_dt, q25, q75, horizon_hits)")
    p.set_defaults(func=cmd_arc_stats)
    return parser


_OUTPUT_ARGS = {"out", "trace", "csv", "func"}


def _input_hash(args, hashes: list) -> str:
    h = hashlib.sha256()
    for raw in hashes:
        h.update(hashlib.sha256(raw).digest())
    settings = {k: v for k, v in vars(args).items() if k not in _OUTPUT_ARGS}
    for key in ("problem", "schedule", "model", "projector"):
        settings.pop(key, None)
    h.update(json.dumps(settings, sort_keys=True).encode())
    return h.hexdigest()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    hashes: list = []
    try:
        payload = args.func(args, hashes)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (IntegrationError, GradientCheckError, np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    payload = dict(payload)
    payload.update(version=__version__, seed=getattr(args, "seed", 0), input_sha256=_input_hash(args, hashes),
                   command=args.command)
    text = dumps(payload) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    failed = payload.get("passed") is False
    return EXIT_NUMERIC if failed else EXIT_OK
