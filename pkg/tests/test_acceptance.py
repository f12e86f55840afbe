"""Acceptance suite: one PASS/FAIL line per criterion, printed in the summary."""
import math
import time

import numpy as np
import pytest

from qpmp.arcstats import CrossingExperiment, commensurate_period_check, random_switching_seed, shortening_experiment
from qpmp.dynamics import ControlProblem, GridSpec, propagate_pair, propagate_state
from qpmp.operators import IDENTITY_2, SIGMA_X, SIGMA_Y, SIGMA_Z, ground_state, ising_problem
from qpmp.opensys import (
    ConstantSpectralDensity,
    CorrelationSpec,
    GAMEModel,
    JointModel,
    OhmicSpectralDensity,
    RedfieldModel,
    endpoint_arc_checks,
)
from qpmp.optimize import (
    OptimizeConfig,
    estimate_critical_time,
    gradient_mismatch,
    optimize_discretized,
    optimize_switch_times,
    short_time_cost_coefficient,
)
from qpmp.pmp import propagate_switching
from qpmp.qubit import (
    EXCITED_START,
    GROUND_START,
    QUBIT_B,
    QUBIT_C,
    bloch_propagate,
    qubit_problem,
    random_schedules,
    small_time_sign_check,
)
from qpmp.reachability import block_reachability, generate_lie_algebra

from .conftest import record_criterion
from .helpers import random_density, random_hermitian

GROUND_B = 0.5 * (IDENTITY_2 - SIGMA_X)


def qubit_optimum(t_f):
    return -math.sin(t_f / 2) ** 2 / 2


# 1 -------------------------------------------------------------------------


def two_bang_qubit_runs():
    out = {}
    start = time.perf_counter()
    for frac in (0.5, 0.75, 0.95):
        t_f = frac * math.pi
        out[t_f] = optimize_switch_times(qubit_problem(t_f), 2)
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def qubit_runs():
    return two_bang_qubit_runs()


def test_criterion_01_single_qubit_two_bang_optimum(qubit_runs):
    runs, elapsed = qubit_runs
    ok, worst_switch, worst_cost = True, 0.0, 0.0
    for t_f, res in runs.items():
        arcs = res.schedule.arcs
        shape = len(arcs) == 2 and arcs[0].value == 0 and arcs[1].value == 1
        switch_err = abs(res.switch_times[0] - t_f / 2) / t_f
        oracle = bloch_propagate(GROUND_START, res.schedule).final[2] / 2
        cost_err = max(abs(res.cost - qubit_optimum(t_f)), abs(oracle - qubit_optimum(t_f)))
        worst_switch, worst_cost = max(worst_switch, switch_err), max(worst_cost, cost_err)
        ok &= shape and switch_err <= 1e-3 and cost_err <= 1e-6
    ok &= elapsed < 10
    record_criterion(1, ok, f"switch error {worst_switch:.1e} t_f, cost error {worst_cost:.1e}, {elapsed:.2f} s")
    assert ok


# 2 -------------------------------------------------------------------------


def test_criterion_02_global_minimum_at_critical_time():
    at_pi = optimize_switch_times(qubit_problem(math.pi), 2)
    grid = np.linspace(0.2 * math.pi, 1.4 * math.pi, 21)
    scan = estimate_critical_time(qubit_problem(math.pi), grid, n_arcs=4, config=OptimizeConfig(restarts=4))
    step = grid[1] - grid[0]
    ok = (
        abs(at_pi.cost + 0.5) <= 1e-8
        and abs(scan["t_c_estimate"] - math.pi) <= step + 1e-12
        and scan["max_increase"] <= 1e-6
    )
    record_criterion(
        2, ok,
        f"J(pi) + 1/2 = {at_pi.cost + 0.5:.1e}, t_c = {scan['t_c_estimate'] / math.pi:.3f} pi "
        f"(step {step / math.pi:.3f} pi), largest increase {scan['max_increase']:.1e}",
    )
    assert ok


# 3 -------------------------------------------------------------------------


def certificate_defects(res):
    rep = res.report
    s_prop = propagate_switching(rep.problem, res.schedule, rep.switching_operators[0], GridSpec(n_out=len(rep.t)))
    commuting = np.linalg.norm(rep.problem.driver_commutator @ rep.problem.initial_vector) < 1e-12
    return {
        "terminal": rep.terminal_costate_error,
        "hamiltonian": res.lambda_residual / (1 + abs(res.lambda_)),
        "x_B(0)": abs(rep.x_B[0]) if commuting else 0.0,
        "x_C(t_f)": abs(rep.x_C[-1]),
        "lambda": -res.lambda_ if commuting else -math.inf,
        "switching": float(np.max(np.abs(s_prop.operators - rep.switching_operators))),
    }


def test_criterion_03_maximum_principle_certificates(qubit_runs):
    runs, _ = qubit_runs
    b2, c2 = ising_problem(2, [0.4, -0.9], [(0, 1, 0.7)])
    two_qubit = ControlProblem(b2, c2, ground_state(b2), 1.2)
    outputs = list(runs.values()) + [
        optimize_switch_times(two_qubit, 4),
        optimize_discretized(qubit_problem(0.6 * math.pi), 50),
    ]
    worst = {}
    for res in outputs:
        for key, val in certificate_defects(res).items():
            worst[key] = max(worst.get(key, -math.inf), val)
    ok = (
        worst["terminal"] == 0.0
        and worst["hamiltonian"] < 1e-5
        and worst["x_B(0)"] < 1e-10
        and worst["x_C(t_f)"] < 1e-10
        and worst["lambda"] <= 1e-8
        and worst["switching"] < 1e-8
    )
    # a discretized schedule with a singular stretch is an extremal only as N grows
    singular = optimize_discretized(two_qubit, 40, OptimizeConfig(restarts=1))
    record_criterion(
        3, ok,
        f"{len(outputs)} extremals: H residual {worst['hamiltonian']:.1e}, x_B(0) {worst['x_B(0)']:.1e}, "
        f"x_C(t_f) {worst['x_C(t_f)']:.1e}, S propagation {worst['switching']:.1e}; "
        f"discretized N=40 with singular stretch has H residual {singular.lambda_residual:.1e} (O(h))",
    )
    assert ok


# 4 -------------------------------------------------------------------------


def test_criterion_04_inactive_constraint_counterexample():
    res = optimize_switch_times(qubit_problem(0.1, EXCITED_START), 2)
    ensemble = small_time_sign_check(EXCITED_START, random_schedules(200, 0.1, np.random.default_rng(4)), 0.1)
    ok = abs(res.cost) <= 1e-8 and ensemble["min_v3"] >= -1e-9 and ensemble["n_schedules"] == 200
    record_criterion(4, ok, f"optimized cost {res.cost:.1e}, ensemble min v3 {ensemble['min_v3']:.1e} over 200 schedules")
    assert ok


# 5 -------------------------------------------------------------------------


def short_time_instances():
    rng = np.random.default_rng(5)
    out = [(QUBIT_B, QUBIT_C)]
    for _ in range(3):
        out.append((random_hermitian(rng, 4), random_hermitian(rng, 4)))
    return out


def short_time_errors(key):
    errs = []
    for b, c in short_time_instances():
        rep = short_time_cost_coefficient(b, c, [1e-2])
        errs.append(abs(rep["fitted_per_t"][0] - rep[key]) / abs(rep[key]))
    return max(errs)


def fitted_to_stated_ratios():
    out = []
    for b, c in short_time_instances():
        rep = short_time_cost_coefficient(b, c, [1e-2])
        out.append(rep["fitted_per_t"][0] / rep["single_sum_form"])
    return out


def test_criterion_05_short_time_coefficient_corrected_form():
    # Tr([B,C][C,rho0]) = -2 sum (l_j - l_1)|a_j|^2 is what the expansion yields
    assert short_time_errors("analytic") < 0.05


@pytest.mark.xfail(strict=True, reason="the single-sum coefficient without the factor 2 is half the true value")
def test_criterion_05_short_time_coefficient_as_stated():
    printed = short_time_errors("single_sum_form")
    corrected = short_time_errors("analytic")
    ratios = fitted_to_stated_ratios()
    ok = printed < 0.05
    record_criterion(
        5, ok,
        f"fitted t^2 coefficient is {min(ratios):.3f}..{max(ratios):.3f} x the stated -sum(l_j - l_1)|a_j|^2; "
        f"corrected -2 sum(l_j - l_1)|a_j|^2 within {corrected:.1%} (1 qubit + 3 random 4-level)",
    )
    assert ok


# 6 -------------------------------------------------------------------------


def test_criterion_06_adjoint_gradient_gate():
    rng = np.random.default_rng(6)
    worst = 0.0
    for k in range(10):
        d = 2 if k < 5 else 4
        b, c = random_hermitian(rng, d), random_hermitian(rng, d)
        problem = ControlProblem(b, c, ground_state(b), rng.uniform(0.5, 3.0))
        worst = max(worst, gradient_mismatch(problem, rng.uniform(0, 1, 50)))
    ok = worst < 1e-5
    record_criterion(6, ok, f"max relative mismatch {worst:.1e} over 10 instances (5 x 1 qubit, 5 x 2 qubits, N=50)")
    assert ok


# 7 -------------------------------------------------------------------------


def test_criterion_07_redfield_final_point():
    rng = np.random.default_rng(3)
    worst_dc, positive, confirmed = 0.0, 0, 0
    for _ in range(5):
        spec = CorrelationSpec(rng.uniform(0.02, 0.2), rng.uniform(0.2, 2.0), rng.uniform(-0.5, 0.5))
        model = RedfieldModel(QUBIT_B, QUBIT_C, [SIGMA_Z], spec)
        worst_dc = max(worst_dc, max(np.linalg.norm(model.apply_adjoint_dissipator(s, QUBIT_C))
                                     for s in np.linspace(0, 1, 11)))
        problem = ControlProblem.for_model(model, GROUND_B, rng.uniform(0.4, 0.9) * math.pi)
        res = optimize_discretized(problem, 40, OptimizeConfig(restarts=1))
        rep = endpoint_arc_checks(model, problem, res)
        if rep["lambda_positive"]:
            positive += 1
            confirmed += rep["verdicts"]["final_point"] == "confirmed"
    ok = worst_dc < 1e-12 and positive > 0 and confirmed == positive
    record_criterion(7, ok, f"|D'(C)| {worst_dc:.1e}; s(t_f)=1 on {confirmed}/{positive} instances with lambda > 0")
    assert ok


# 8 -------------------------------------------------------------------------


def test_criterion_08_game_counterexample():
    s_grid = np.linspace(0, 1, 11)

    def cancellation(model):
        return max(np.linalg.norm(model.apply_adjoint_dissipator(s, QUBIT_C)) for s in s_grid)

    constant = GAMEModel(QUBIT_B, QUBIT_C, [SIGMA_Z], ConstantSpectralDensity(0.05))
    ohmic = GAMEModel(QUBIT_B, QUBIT_C, [SIGMA_Z], OhmicSpectralDensity(0.02, 5.0, 1.0))
    problem = ControlProblem.for_model(ohmic, GROUND_B, math.pi)
    min_eig = min(
        propagate_state(problem, sched, GridSpec(h=1e-3 * math.pi)).min_eigs.min()
        for sched in random_schedules(10, math.pi, np.random.default_rng(8))
    )
    dc_const, dc_ohmic = cancellation(constant), cancellation(ohmic)
    ok = dc_const < 1e-12 and dc_ohmic > 1e-6 and min_eig >= -1e-9
    record_criterion(8, ok, f"constant rate {dc_const:.1e}, ohmic rate {dc_ohmic:.1e}, min eigenvalue {min_eig:.1e}")
    assert ok


# 9 -------------------------------------------------------------------------


def joint_instance(k, rng):
    g = rng.uniform(0.05, 0.2)
    if k % 2 == 0:
        # interaction supported on ker(rho_E): the initial-arc hypotheses hold
        env_op, h_env, rho_env = g * np.diag([0.0, 1.0]), np.diag([0.0, rng.uniform(0.2, 1.0)]), np.diag([1.0, 0.0])
    else:
        env_op, h_env = g * random_hermitian(rng, 2), random_hermitian(rng, 2)
        w, v = np.linalg.eigh(h_env)
        p = np.exp(-w) / np.exp(-w).sum()
        rho_env = 0.7 * (v * p) @ v.conj().T + 0.15 * IDENTITY_2
    return JointModel(QUBIT_B, QUBIT_C, [(SIGMA_Z, env_op)], h_env, rho_env)


@pytest.mark.slow
def test_criterion_09_joint_endpoint_arcs():
    rng = np.random.default_rng(0)
    t_f = 0.5 * math.pi
    good, below_plateau, initial_checked = 0, 0, 0
    for k in range(20):
        model = joint_instance(k, rng)
        problem = ControlProblem.for_model(model, GROUND_B, t_f)
        # t_f sits below the plateau when a longer horizon still lowers the cost
        j_here = optimize_switch_times(problem, 2, OptimizeConfig(restarts=2)).cost
        j_later = optimize_switch_times(problem.with_tf(1.3 * t_f), 2, OptimizeConfig(restarts=2)).cost
        below_plateau += j_later < j_here - 1e-6
        res = optimize_discretized(problem, 60, OptimizeConfig(restarts=1))
        rep = endpoint_arc_checks(model, problem, res)
        initial = rep["verdicts"]["initial_arc"]
        initial_checked += initial != "not applicable"
        good += (rep["lambda_positive"] and j_later < j_here - 1e-6 and rep["verdicts"]["final_arc"] == "confirmed"
                 and initial in ("confirmed", "not applicable"))
    ok = good >= 19
    record_criterion(
        9, ok,
        f"{good}/20 instances with lambda > 0 end on bang1 ({initial_checked} also checked for an initial bang0); "
        f"{below_plateau}/20 below the cost plateau",
    )
    assert ok


# 10 ------------------------------------------------------------------------


def test_criterion_10_lie_algebra_fixtures():
    qubit = generate_lie_algebra(QUBIT_B, QUBIT_C)
    decoupled = generate_lie_algebra(np.kron(SIGMA_X, IDENTITY_2),
                                     np.kron(SIGMA_Z, IDENTITY_2) + np.kron(IDENTITY_2, SIGMA_Z))
    heis = np.kron(SIGMA_X, SIGMA_X) + np.kron(SIGMA_Y, SIGMA_Y) + np.kron(SIGMA_Z, SIGMA_Z)
    block = block_reachability(np.kron(SIGMA_Z, IDENTITY_2), heis, np.diag([0.0, 1.0, 1.0, 0.0]))
    ok = (qubit.dimension == 3 and decoupled.dimension == 4 and not decoupled.full_su
          and block["dimension"] == 3 and block["verdict"] == "reachable within block")
    record_criterion(10, ok, f"dims {qubit.dimension}, {decoupled.dimension} (full su(4): {decoupled.full_su}), "
                             f"Heisenberg block: {block['verdict']}")
    assert ok


# 11 ------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_11_arc_shortening_trend():
    start = time.perf_counter()
    table = shortening_experiment(CrossingExperiment())
    elapsed = time.perf_counter() - start
    b = np.kron(SIGMA_X, IDENTITY_2) + np.kron(IDENTITY_2, SIGMA_X)
    c = np.kron(SIGMA_Z, SIGMA_Z)
    period = commensurate_period_check(c, b, random_switching_seed(b, c, np.random.default_rng(11)), J=1.0)
    medians = ", ".join(f"{r['median_dt']:.3f}" for r in table.rows)
    ok = table.rank_correlation < 0 and elapsed < 300 and period["passed"]
    record_criterion(
        11, ok,
        f"rank correlation {table.rank_correlation:+.2f} (medians {medians} for n=2..5, seed 0), "
        f"{elapsed:.0f} s; zz period residual {period['residual']:.1e}",
    )
    assert ok


# 12 ------------------------------------------------------------------------


def test_criterion_12_conservation():
    rng = np.random.default_rng(12)
    schedules = random_schedules(5, math.pi, rng)
    env = (random_hermitian(rng, 2, 0.3), random_hermitian(rng, 2), random_density(rng, 2))
    joint = JointModel(QUBIT_B, QUBIT_C, [(SIGMA_Z, env[0])], env[1], env[2])
    rho0 = random_density(rng, 2, rank=1)
    problems = {
        "closed": ControlProblem(QUBIT_B, QUBIT_C, rho0, math.pi),
        "joint": ControlProblem.for_model(joint, rho0, math.pi),
        "redfield": ControlProblem.for_model(
            RedfieldModel(QUBIT_B, QUBIT_C, [SIGMA_Z, 0.5 * SIGMA_X], CorrelationSpec(0.1, 0.7, 0.2)), rho0, math.pi),
        "game": ControlProblem.for_model(
            GAMEModel(QUBIT_B, QUBIT_C, [SIGMA_Z, 0.5 * SIGMA_X], OhmicSpectralDensity(0.05, 4.0, 1.0)), rho0, math.pi),
    }
    unitary_defect, pairing_drift = 0.0, 0.0
    for kind, problem in problems.items():
        for sched in schedules:
            traj, cost = propagate_pair(problem, sched, GridSpec(n_out=101))
            pairing = np.einsum("ij,ij->i", traj.coords, cost.coords)
            pairing_drift = max(pairing_drift, float(np.max(np.abs(pairing - pairing[-1]))))
            if kind in ("closed", "joint"):
                spec0 = np.linalg.eigvalsh(problem.initial_state)
                unitary_defect = max(
                    unitary_defect,
                    float(np.max(np.abs(traj.traces - 1))),
                    float(np.max(np.abs(traj.purities - traj.purities[0]))),
                    float(np.max(np.abs(traj.spectra - spec0[None]))),
                )
    ok = unitary_defect < 1e-9 and pairing_drift < 1e-8
    record_criterion(12, ok, f"trace/purity/spectrum defect {unitary_defect:.1e}, pairing drift {pairing_drift:.1e} "
                             f"(closed, joint, redfield, game)")
    assert ok
