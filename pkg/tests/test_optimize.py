import math

import numpy as np
import pytest

from qpmp import optimize as opt
from qpmp.dynamics import ControlProblem, Schedule, propagate_state
from qpmp.opensys import CorrelationSpec, GAMEModel, JointModel, OhmicSpectralDensity, RedfieldModel
from qpmp.operators import IDENTITY_2, SIGMA_X, SIGMA_Z, ground_state, ising_problem
from qpmp.optimize import (
    GradientCheckError,
    OptimizeConfig,
    adjoint_gradient,
    discretized_cost,
    estimate_critical_time,
    finite_difference_gradient,
    gradient_mismatch,
    optimize_discretized,
    optimize_switch_times,
    short_time_cost_coefficient,
    worker_count,
)
from qpmp.qubit import QUBIT_B, QUBIT_C, optimal_cost, qubit_problem

from .helpers import random_hermitian

FAST = OptimizeConfig(restarts=4)
GROUND_B = 0.5 * (IDENTITY_2 - SIGMA_X)


@pytest.mark.parametrize("frac", [0.5, 0.75])
def test_two_bang_optimum_matches_closed_form(frac):
    t_f = frac * math.pi
    res = optimize_switch_times(qubit_problem(t_f), 2, FAST)
    assert res.switch_times[0] == pytest.approx(t_f / 2, abs=1e-6)
    assert res.cost == pytest.approx(optimal_cost(t_f), abs=1e-12)
    assert res.converged
    assert res.classification.labels == ["bang0", "bang1"]
    assert res.lambda_ == pytest.approx(math.sin(t_f) / 4, abs=1e-8)


def test_extra_arcs_collapse_onto_two_bang_optimum():
    t_f = 0.7 * math.pi
    res = optimize_switch_times(qubit_problem(t_f), 4, FAST)
    assert res.cost == pytest.approx(optimal_cost(t_f), abs=1e-10)


def test_same_seed_gives_identical_result():
    a = optimize_switch_times(qubit_problem(2.0), 2, FAST)
    b = optimize_switch_times(qubit_problem(2.0), 2, FAST)
    assert a.durations == b.durations and a.cost == b.cost


def test_switch_time_result_carries_certificate():
    res = optimize_switch_times(qubit_problem(2.0), 2, FAST)
    rep = res.report
    assert rep.terminal_costate_error == 0.0
    assert rep.lambda_residual < 1e-5 * (1 + abs(rep.lambda_))
    assert res.pmp_consistency > 0.99


def test_odd_arc_count_rejected():
    with pytest.raises(ValueError):
        optimize_switch_times(qubit_problem(1.0), 3, FAST)


def test_critical_time_scan_small_grid():
    grid = np.linspace(0.6, 1.2, 4) * math.pi
    scan = estimate_critical_time(qubit_problem(1.0), grid, n_arcs=4, config=FAST)
    assert scan["t_c_estimate"] == pytest.approx(math.pi * 1.0, abs=1e-12)
    assert scan["max_increase"] <= 1e-6
    assert scan["J_curve"][0] == pytest.approx(optimal_cost(0.6 * math.pi), abs=1e-10)


def test_discretized_cost_equals_propagated_schedule(rng):
    s = rng.uniform(size=30)
    problem = qubit_problem(2.0)
    sched = Schedule.from_json({"arcs": [{"type": "anneal", "dt": 2.0, "samples": list(s)}]})
    traj = propagate_state(problem, sched)
    assert discretized_cost(problem, s) == pytest.approx(traj.expectation(QUBIT_C)[-1], abs=1e-13)


def _dissipative_problems():
    rho0 = GROUND_B
    yield ControlProblem.for_model(
        JointModel(QUBIT_B, QUBIT_C, [(SIGMA_Z, 0.2 * SIGMA_X)], 0.4 * SIGMA_Z, np.diag([0.9, 0.1])), rho0, 1.5
    )
    yield ControlProblem.for_model(RedfieldModel(QUBIT_B, QUBIT_C, [SIGMA_Z], CorrelationSpec(0.1, 0.7, 0.2)), rho0, 1.5)
    yield ControlProblem.for_model(GAMEModel(QUBIT_B, QUBIT_C, [SIGMA_Z], OhmicSpectralDensity(0.05, 5.0, 1.0)), rho0, 1.5)


@pytest.mark.parametrize("problem", list(_dissipative_problems()), ids=["joint", "redfield", "game"])
def test_adjoint_gradient_matches_finite_differences_open(problem, rng):
    s = rng.uniform(0.1, 0.9, size=20)
    assert gradient_mismatch(problem, s) < 1e-5


def test_adjoint_gradient_matches_finite_differences_ising(rng):
    b, c = ising_problem(2, [0.4, -0.3], [(0, 1, 0.8)])
    problem = ControlProblem(b, c, ground_state(b), 1.2)
    s = rng.uniform(size=25)
    g = adjoint_gradient(problem, s)
    fd = finite_difference_gradient(problem, s)
    assert np.max(np.abs(g - fd)) < 1e-8 * max(1.0, np.max(np.abs(fd)))


def test_adjoint_gradient_at_repeated_bang_values():
    # degenerate spectra of the generator stress the divided differences
    s = np.array([0.0] * 10 + [1.0] * 10)
    assert gradient_mismatch(qubit_problem(2.0), s) < 1e-6


def test_discretized_optimizer_finds_bang_bang():
    t_f = 0.95 * math.pi
    res = optimize_discretized(qubit_problem(t_f), 100, OptimizeConfig(restarts=1))
    assert res.cost == pytest.approx(optimal_cost(t_f), abs=1e-9)
    assert res.classification.labels == ["bang0", "bang1"]
    assert res.diagnostics["gradient_mismatch"] < 1e-5


def test_gradient_gate_raises_on_wrong_gradient(monkeypatch):
    monkeypatch.setattr(opt, "adjoint_gradient", lambda problem, s: np.zeros(len(s)))
    with pytest.raises(GradientCheckError):
        optimize_discretized(qubit_problem(2.0), 20, OptimizeConfig(restarts=1))


def test_short_time_coefficient_qubit():
    rep = short_time_cost_coefficient(QUBIT_B, QUBIT_C, [1e-2, 5e-3])
    assert rep["analytic"] == pytest.approx(-0.5)
    assert rep["trace_form"] == pytest.approx(-0.5)
    assert rep["single_sum_form"] == pytest.approx(-0.25)
    assert rep["relative_error_per_t"][0] < 0.05


def test_short_time_coefficient_random_four_level(rng):
    b, c = random_hermitian(rng, 4), random_hermitian(rng, 4)
    rep = short_time_cost_coefficient(b, c, [1e-2, 5e-3])
    assert rep["analytic"] == pytest.approx(rep["trace_form"], rel=1e-10)
    assert rep["relative_error_per_t"][0] < 0.05


def test_short_time_coefficient_rejects_commuting_pair():
    with pytest.raises(ValueError):
        short_time_cost_coefficient(SIGMA_Z, 2 * SIGMA_Z + 0.1 * IDENTITY_2, [1e-2])


def test_worker_count_reads_environment(monkeypatch):
    monkeypatch.setenv("QOC_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("QOC_THREADS", "junk")
    assert worker_count() == 1
