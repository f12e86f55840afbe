import math

import numpy as np
import pytest

from qpmp.dynamics import Bang, Schedule, propagate_state
from qpmp.operators import SIGMA_X, SIGMA_Z
from qpmp.qubit import (
    EXCITED_START,
    GROUND_START,
    bloch_propagate,
    bloch_vector,
    delta_recursion_check,
    deltas_from_taus,
    density_from_bloch,
    optimal_bangbang,
    optimal_cost,
    qubit_problem,
    random_schedules,
    rotation_x,
    rotation_z,
    small_time_sign_check,
    switch_return_time,
)


def test_bloch_map_round_trip():
    v = np.array([0.3, -0.2, 0.5])
    assert np.allclose(bloch_vector(density_from_bloch(v)), v)


def test_rotations_are_orthogonal():
    for r in (rotation_z(0.7), rotation_x(-1.3)):
        assert np.allclose(r @ r.T, np.eye(3))
        assert np.isclose(np.linalg.det(r), 1.0)


def test_quarter_turn_about_problem_axis():
    traj = bloch_propagate(GROUND_START, Schedule.constant(0, math.pi / 2))
    assert np.allclose(traj.final, [0.0, -1.0, 0.0], atol=1e-15)


def test_excited_start_stays_in_equator_without_driver():
    traj = bloch_propagate(EXCITED_START, Schedule.constant(0, 2.3), n_out=101)
    assert np.max(np.abs(traj.vectors[:, 2])) < 1e-15


def test_half_period_schedule_reaches_problem_ground_state():
    sched, cost = optimal_bangbang(math.pi)
    assert cost == pytest.approx(-0.5, abs=1e-15)
    assert np.allclose(bloch_propagate(GROUND_START, sched).final, [0, 0, -1], atol=1e-15)


@pytest.mark.parametrize("frac", [0.25, 0.5, 0.75, 0.95])
def test_optimal_bangbang_closed_form(frac):
    t_f = frac * math.pi
    sched, cost = optimal_bangbang(t_f)
    assert [type(a) for a in sched.arcs] == [Bang, Bang]
    assert [a.value for a in sched.arcs] == [0, 1]
    assert np.allclose([a.duration for a in sched.arcs], [t_f / 2, t_f / 2])
    assert cost == pytest.approx(-math.sin(t_f / 2) ** 2 / 2, abs=1e-15)
    assert bloch_propagate(GROUND_START, sched).costs[-1] == pytest.approx(cost, abs=1e-14)


def test_cost_at_095_pi_misses_ground_state():
    # -sin^2(0.475 pi) / 2, evaluated independently
    assert optimal_cost(0.95 * math.pi) == pytest.approx(-0.49692208514878444, abs=1e-15)


def test_cost_vanishes_quadratically_at_small_time():
    assert optimal_cost(1e-3) / 1e-6 == pytest.approx(-1 / 8, rel=1e-6)


def test_long_horizon_is_padded_with_warning():
    with pytest.warns(UserWarning):
        sched, cost = optimal_bangbang(1.2 * math.pi)
    assert sched.t_f == pytest.approx(1.2 * math.pi)
    assert cost == pytest.approx(-0.5, abs=1e-15)
    assert bloch_propagate(GROUND_START, sched).costs[-1] == pytest.approx(-0.5, abs=1e-14)


def test_bloch_and_density_propagators_agree(rng):
    problem = qubit_problem(math.pi)
    for sched in random_schedules(10, math.pi, rng):
        bt = bloch_propagate(GROUND_START, sched, n_out=51)
        traj = propagate_state(problem.with_tf(sched.t_f), sched)
        assert np.allclose(bloch_vector(traj.final_state), bt.final, atol=1e-10)


def test_small_time_sign_check_both_starts(rng):
    scheds = random_schedules(200, 0.05, rng)
    up = small_time_sign_check(EXCITED_START, scheds, 0.05)
    down = small_time_sign_check(GROUND_START, scheds, 0.05)
    assert up["passed"] and down["passed"]
    assert up["n_schedules"] == 200
    assert up["min_v3"] >= -1e-9 and down["max_v3"] <= 1e-9


def test_sign_check_trivial_for_problem_only_schedule():
    res = small_time_sign_check(EXCITED_START, [Schedule.constant(0, 0.05)], 0.05)
    assert res["min_v3"] == pytest.approx(0.0, abs=1e-15) and res["max_v3"] == pytest.approx(0.0, abs=1e-15)


def test_delta_recursion_values():
    assert np.allclose(deltas_from_taus([0.5, 0.8, 0.3]), [0.5, 0.3, 0.0])


def test_delta_recursion_equal_halves_satisfy_final_condition():
    a = 0.7
    rep = delta_recursion_check(1.0, -math.sin(a), (a, a))
    assert np.allclose(rep["deltas"], [a, 0.0])
    assert rep["consistent"] and rep["final_ok"]
    assert rep["first_violation"] is None


def test_delta_recursion_flags_unequal_halves():
    rep = delta_recursion_check(1.0, -math.sin(0.7), (0.7, 0.9))
    assert not rep["final_ok"]
    assert rep["final_condition"] == pytest.approx(math.sin(0.2), abs=1e-12)


def test_singular_switching_operator_returns_after_full_turn():
    assert switch_return_time(1.0) == pytest.approx(2 * math.pi, abs=1e-12)
    assert switch_return_time(0.3) == pytest.approx(2 * math.pi, abs=1e-12)


def test_standard_problem_operators():
    p = qubit_problem(1.0)
    assert np.allclose(p.B.matrix, SIGMA_X / 2) and np.allclose(p.C.matrix, SIGMA_Z / 2)
