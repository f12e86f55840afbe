import math

import numpy as np
import pytest
from scipy.linalg import expm

from qpmp.dynamics import (
    Anneal,
    Bang,
    ControlProblem,
    GridSpec,
    Schedule,
    evaluate_cost,
    final_state_vector,
    hamiltonian_at,
    propagate_costate,
    propagate_pair,
    propagate_state,
    schedule_from_samples,
)
from qpmp.operators import SIGMA_Z, coordinatize, ground_state, ising_problem
from qpmp.qubit import QUBIT_B, QUBIT_C, qubit_problem

from .helpers import random_density, random_hermitian


def unitary_reference(b, c, rho0, schedule):
    """Final density matrix from Hamiltonian unitaries, independent of the package."""
    rho = np.array(rho0, dtype=complex)
    for s, d in schedule.segments():
        u = expm(-1j * d * (s * b + (1 - s) * c))
        rho = u @ rho @ u.conj().T
    return rho


MIXED = Schedule((Bang(0, 0.4), Anneal((0.1, 0.5, 0.9), 0.9), Bang(1, 0.7)))


def test_bang_rejects_interior_value():
    with pytest.raises(ValueError):
        Bang(0.5, 1.0)


def test_anneal_rejects_out_of_range_samples():
    with pytest.raises(ValueError):
        Anneal((0.2, 1.2), 1.0)


def test_schedule_drops_zero_duration_arcs_with_warning():
    with pytest.warns(UserWarning, match="zero-duration"):
        sched = Schedule((Bang(0, 1.0), Bang(1, 0.0), Bang(0, 0.5)))
    assert len(sched.arcs) == 2
    assert sched.t_f == 1.5


def test_schedule_breakpoints_and_values():
    assert np.allclose(MIXED.breakpoints(), [0.0, 0.4, 1.3, 2.0])
    assert MIXED.value_at(0.0) == 0.0
    # right-continuous at a switch, last piece also covers t_f
    assert MIXED.value_at(0.4) == 0.1
    assert MIXED.value_at(0.4 + 0.3) == 0.5
    assert MIXED.value_at(2.0) == 1.0


def test_schedule_json_round_trip():
    data = MIXED.to_json()
    assert data["arcs"][1] == {"type": "anneal", "dt": 0.9, "samples": [0.1, 0.5, 0.9]}
    assert Schedule.from_json(data) == MIXED


def test_schedule_json_reports_bad_arc_type():
    with pytest.raises(ValueError, match=r"arcs\[0\]\.type"):
        Schedule.from_json({"arcs": [{"type": "ramp", "dt": 1.0}]})


def test_schedule_from_samples_groups_runs():
    sched = schedule_from_samples([0, 0, 0.3, 0.6, 1, 1, 1, 1], 8.0)
    kinds = [(type(a).__name__, a.duration) for a in sched.arcs]
    assert kinds == [("Bang", 2.0), ("Anneal", 2.0), ("Bang", 4.0)]
    assert sched.arcs[1].samples == (0.3, 0.6)


def test_problem_validates_initial_state():
    with pytest.raises(ValueError, match="trace"):
        ControlProblem(QUBIT_B, QUBIT_C, np.eye(2), 1.0)
    with pytest.raises(ValueError):
        ControlProblem(QUBIT_B, QUBIT_C, np.diag([1.5, -0.5]), 1.0)


def test_problem_rejects_unknown_kind():
    with pytest.raises(ValueError, match="kind"):
        ControlProblem(QUBIT_B, QUBIT_C, ground_state(QUBIT_B), 1.0, kind="lindblad")


def test_problem_warns_when_hamiltonians_commute():
    with pytest.warns(UserWarning):
        p = ControlProblem(SIGMA_Z, 2 * SIGMA_Z, np.diag([1.0, 0.0]), 1.0)
    assert p.commuting


def test_hamiltonian_interpolation():
    h = hamiltonian_at(qubit_problem(1.0), 0.25)
    assert np.allclose(h.matrix, 0.25 * QUBIT_B + 0.75 * QUBIT_C)


def test_qubit_propagation_matches_unitary_reference():
    problem = qubit_problem(MIXED.t_f)
    traj = propagate_state(problem, MIXED)
    ref = unitary_reference(QUBIT_B, QUBIT_C, problem.rho0.matrix, MIXED)
    assert np.allclose(traj.final_state, ref, atol=1e-12)
    assert np.isclose(evaluate_cost(traj, problem), np.trace(QUBIT_C @ ref).real, atol=1e-12)


def test_three_qubit_propagation_matches_unitary_reference(rng):
    b, c = ising_problem(3, [0.3, -0.2, 0.5], [(0, 1, 1.0), (1, 2, -0.6)])
    rho0 = random_density(rng, 8)
    problem = ControlProblem(b, c, rho0, MIXED.t_f)
    ref = unitary_reference(b.matrix, c.matrix, rho0, MIXED)
    assert np.allclose(coordinatize(ref), final_state_vector(problem, MIXED), atol=1e-11)


def test_output_grid_defaults():
    traj = propagate_state(qubit_problem(1.0), Schedule.constant(0.3, 1.0))
    assert traj.grid.shape == (2001,)
    assert traj.grid[0] == 0.0 and traj.grid[-1] == 1.0
    assert np.all(traj.s_values == 0.3)


def test_stationary_initial_state_under_driver():
    problem = qubit_problem(2.0)
    traj = propagate_state(problem, Schedule.constant(1, 2.0))
    assert np.allclose(traj.states, problem.rho0.matrix, atol=1e-14)
    assert abs(evaluate_cost(traj, problem)) < 1e-15


def test_costate_terminal_condition_and_backward_solution():
    problem = qubit_problem(MIXED.t_f)
    cost = propagate_costate(problem, MIXED, GridSpec(n_out=11))
    assert np.allclose(cost.costate(-1), -QUBIT_C, atol=0)
    # p(t) = U(t_f, t)^dagger (-C) U(t_f, t) at t = 0
    u = np.eye(2)
    for s, d in MIXED.segments():
        u = expm(-1j * d * (s * QUBIT_B + (1 - s) * QUBIT_C)) @ u
    assert np.allclose(cost.costate(0), -u.conj().T @ QUBIT_C @ u, atol=1e-12)


def test_pairing_is_conserved(rng):
    b, c = random_hermitian(rng, 3), random_hermitian(rng, 3)
    problem = ControlProblem(b, c, random_density(rng, 3), MIXED.t_f)
    traj, cost = propagate_pair(problem, MIXED)
    pairing = np.einsum("ij,ij->i", traj.coords, cost.coords)
    assert np.max(np.abs(pairing - pairing[0])) < 1e-12


def test_internal_step_cap_refines_anneal():
    problem = qubit_problem(1.0)
    sched = Schedule((Anneal((0.5,), 1.0),))
    coarse = propagate_state(problem, sched, GridSpec(n_out=3))
    fine = propagate_state(problem, sched, GridSpec(n_out=3, h=1e-4))
    assert np.allclose(coarse.final_state, fine.final_state, atol=1e-12)


def test_trajectory_diagnostics(rng):
    problem = ControlProblem(QUBIT_B, QUBIT_C, random_density(rng, 2), math.pi)
    traj = propagate_state(problem, Schedule.bangs(0, [1.0, math.pi - 1.0]), GridSpec(n_out=51))
    assert np.allclose(traj.traces, 1.0, atol=1e-12)
    assert np.allclose(traj.purities, traj.purities[0], atol=1e-12)
    assert np.all(traj.min_eigs > -1e-12)
    assert traj.spectra.shape == (51, 2)
