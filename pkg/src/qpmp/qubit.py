"""Exact single-qubit oracle for ``B = sx/2``, ``C = sz/2``.

With ``rho = (I + v.sigma)/2`` the von Neumann equation becomes
``dv/dt = M(s) v`` where ``M(s)`` generates a rotation about the axis
``(s, 0, 1 - s)``.  Bangs are the closed-form rotations ``e^{tZ}`` (about z,
driver off) and ``e^{tX}`` (about x, driver on).  No step is integrated
numerically here.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dynamics import Anneal, Bang, ControlProblem, Schedule
from .operators import SIGMA_X, SIGMA_Y, SIGMA_Z, as_matrix

__all__ = [
    "QUBIT_B",
    "QUBIT_C",
    "GROUND_START",
    "EXCITED_START",
    "BlochTrajectory",
    "qubit_problem",
    "is_standard_qubit",
    "bloch_vector",
    "density_from_bloch",
    "rotation_z",
    "rotation_x",
    "bloch_generator",
    "bloch_step",
    "bloch_propagate",
    "optimal_bangbang",
    "optimal_cost",
    "random_schedules",
    "small_time_sign_check",
    "deltas_from_taus",
    "delta_recursion_check",
    "switch_return_time",
]

QUBIT_B = SIGMA_X / 2
QUBIT_C = SIGMA_Z / 2
GROUND_START = np.array([-1.0, 0.0, 0.0])
EXCITED_START = np.array([1.0, 0.0, 0.0])


def bloch_vector(rho) -> np.ndarray:
    m = as_matrix(rho)
    if m.shape != (2, 2):
        raise ValueError("Bloch vectors need a 2x2 operator")
    return np.real([np.trace(m @ SIGMA_X), np.trace(m @ SIGMA_Y), np.trace(m @ SIGMA_Z)])


def density_from_bloch(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return 0.5 * (np.eye(2) + v[0] * SIGMA_X + v[1] * SIGMA_Y + v[2] * SIGMA_Z)


def qubit_problem(t_f: float, v0=GROUND_START) -> ControlProblem:
    return ControlProblem(QUBIT_B, QUBIT_C, density_from_bloch(v0), t_f)


def is_standard_qubit(problem: ControlProblem) -> bool:
    return (
        problem.kind == "closed"
        and problem.B.dim == 2
        and np.allclose(problem.B.matrix, QUBIT_B, atol=1e-12)
        and np.allclose(problem.C.matrix, QUBIT_C, atol=1e-12)
    )


def rotation_z(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_x(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def bloch_generator(s: float) -> np.ndarray:
    """``M(s) = (1 - s) Z + s X`` with ``Z``, ``X`` the rotation generators."""
    return np.array([[0.0, -(1 - s), 0.0], [1 - s, 0.0, -s], [0.0, s, 0.0]])


def bloch_step(s: float, t: float) -> np.ndarray:
    """``exp(t M(s))`` in closed form (Rodrigues rotation)."""
    if s == 0.0:
        return rotation_z(t)
    if s == 1.0:
        return rotation_x(t)
    axis = np.array([s, 0.0, 1.0 - s])
    w = float(np.linalg.norm(axis))
    k = bloch_generator(s) / w
    th = w * t
    return np.eye(3) + math.sin(th) * k + (1 - math.cos(th)) * (k @ k)


@dataclass(frozen=True, eq=False)
class BlochTrajectory:
    grid: np.ndarray
    vectors: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.vectors[-1]

    @property
    def costs(self) -> np.ndarray:
        """``Tr(C rho(t)) = v_3 / 2``."""
        return 0.5 * self.vectors[:, 2]


def bloch_propagate(v0, schedule: Schedule, n_out: int = 2001, problem: ControlProblem | None = None) -> BlochTrajectory:
    """Bloch-vector trajectory on a uniform grid of ``n_out`` points.

    Passing ``problem`` checks that it is the standard single-qubit problem.
    """
    if problem is not None and not is_standard_qubit(problem):
        raise ValueError("Bloch oracle only covers B = sx/2, C = sz/2 closed problems")
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != (3,) or np.linalg.norm(v0) > 1 + 1e-12:
        raise ValueError("v0 must be a Bloch vector with norm <= 1")
    t_f = schedule.t_f
    if t_f == 0.0:
        return BlochTrajectory(np.zeros(1), v0[None, :].copy())
    grid = np.linspace(0.0, t_f, n_out)
    segs = schedule.segments()
    starts = np.concatenate([[0.0], np.cumsum([d for _, d in segs])[:-1]])
    out = np.empty((n_out, 3))
    v = v0.copy()
    seg = 0
    seg_start_vec = v.copy()
    for k, t in enumerate(grid):
        while seg < len(segs) - 1 and t >= starts[seg] + segs[seg][1]:
            seg_start_vec = bloch_step(segs[seg][0], segs[seg][1]) @ seg_start_vec
            seg += 1
        out[k] = bloch_step(segs[seg][0], t - starts[seg]) @ seg_start_vec
    return BlochTrajectory(grid, out)


def optimal_cost(t_f: float) -> float:
    """Minimum cost ``-sin^2(t_f/2)/2`` for ``t_f <= pi``; ``-1/2`` beyond."""
    if t_f >= math.pi:
        return -0.5
    return -math.sin(t_f / 2) ** 2 / 2


def optimal_bangbang(t_f: float) -> tuple[Schedule, float]:
    """Optimal schedule from the ground state of the driver.

    Below ``pi`` it is ``s = 0`` then ``s = 1`` for equal halves.  At or
    beyond ``pi`` the extra time is spent first with the driver on, where
    the initial state is stationary, followed by the ``pi`` schedule.
    """
    if not t_f > 0:
        raise ValueError("t_f must be positive")
    if t_f < math.pi:
        return Schedule.bangs(0, [t_f / 2, t_f / 2]), optimal_cost(t_f)
    if t_f > math.pi:
        warnings.warn("t_f >= pi: padding the pi schedule with idle driver time", stacklevel=2)
    pad = t_f - math.pi
    arcs = ([Bang(1, pad)] if pad > 0 else []) + [Bang(0, math.pi / 2), Bang(1, math.pi / 2)]
    return Schedule(tuple(arcs)), -0.5


def random_schedules(n: int, t_f: float, rng: np.random.Generator, max_arcs: int = 6) -> list[Schedule]:
    """Mixed ensemble of random bang sequences and random anneal arcs."""
    out = []
    for _ in range(n):
        n_arcs = int(rng.integers(1, max_arcs + 1))
        w = rng.exponential(size=n_arcs)
        durs = t_f * w / w.sum()
        arcs = []
        for d in durs:
            if rng.random() < 0.5:
                arcs.append(Bang(int(rng.integers(0, 2)), d))
            else:
                arcs.append(Anneal(tuple(rng.random(int(rng.integers(1, 9)))), d))
        out.append(Schedule(tuple(arcs)))
    return out


def small_time_sign_check(v0, schedules: Iterable[Schedule], t_small: float, n_out: int = 201) -> dict:
    """Sign of ``v_3`` along short schedules.

    From the excited start ``(1, 0, 0)`` the cost can never go below zero at
    short times; from the ground start it can never go above zero.  Reports
    the extreme ``v_3`` over all samples with ``t <= t_small``.
    """
    if t_small > 0.1:
        raise ValueError("t_small must be <= 0.1")
    v0 = np.asarray(v0, dtype=float)
    lo, hi = np.inf, -np.inf
    count = 0
    for sch in schedules:
        if abs(sch.t_f - t_small) > 1e-12:
            raise ValueError("each schedule must last exactly t_small")
        tr = bloch_propagate(v0, sch, n_out)
        lo = min(lo, float(tr.vectors[:, 2].min()))
        hi = max(hi, float(tr.vectors[:, 2].max()))
        count += 1
    if v0[0] > 0:
        ok = lo >= -1e-9
    elif v0[0] < 0:
        ok = hi <= 1e-9
    else:
        ok = None
    return {"n_schedules": count, "min_v3": lo, "max_v3": hi, "passed": ok}


def deltas_from_taus(taus: Sequence[float]) -> np.ndarray:
    """``Delta_0 = 0`` and ``Delta_k = tau_k - Delta_{k-1}``."""
    d = [0.0]
    for tau in taus:
        d.append(float(tau) - d[-1])
    return np.array(d[1:])


def delta_recursion_check(r0y: float, r0z: float, taus: Sequence[float], tol: float = 1e-10) -> dict:
    """Verify the switching-time recursion for a bang sequence starting at ``s = 0``.

    The switching vector starts at ``(0, r0y, r0z)`` (so ``x_B(0) = 0``) and
    is rotated by ``e^{tau Z}``, ``e^{tau X}``, ... .  At each interior switch
    ``n`` it must hold that ``(-1)^n sin(Delta_n) r0y = r0z`` and
    ``r(t_n) = (r0z, cos(Delta_n) r0y, r0z)``.  The final arc must end with
    ``sin(Delta_N) = 0``.
    """
    if r0y == 0:
        raise ValueError("r0y must be nonzero")
    taus = [float(x) for x in taus]
    deltas = deltas_from_taus(taus)
    r = np.array([0.0, r0y, r0z])
    rows = []
    first_bad = None
    for n, tau in enumerate(taus, start=1):
        r = (rotation_z(tau) if n % 2 == 1 else rotation_x(tau)) @ r
        if n < len(taus):
            rec2 = abs((-1) ** n * math.sin(deltas[n - 1]) * r0y - r0z)
            expect = np.array([r0z, math.cos(deltas[n - 1]) * r0y, r0z])
            rec3 = float(np.max(np.abs(r - expect)))
            ok = rec2 < tol and rec3 < tol
            rows.append({"index": n, "relation_residual": rec2, "vector_residual": rec3, "ok": ok})
            if not ok and first_bad is None:
                first_bad = n
    final_sin = abs(math.sin(deltas[-1]))
    final_ok = final_sin < tol
    return {
        "deltas": deltas.tolist(),
        "switches": rows,
        "first_violation": first_bad,
        "final_condition": final_sin,
        "final_ok": final_ok,
        "final_vector": r.tolist(),
        "consistent": first_bad is None and final_ok,
    }


def switch_return_time(lam: float, s: float = 0.0, horizon: float = 4 * math.pi, n_scan: int = 4001) -> float | None:
    """First ``t > 0`` where ``x_B = x_C`` again, starting from ``S = lam (sx + sz)``.

    The switching vector evolves like the state, so this is the first
    positive root of ``g(t) = r_x(t) - r_z(t)`` under a constant control.
    Sign changes are refined with ``brentq``; touching roots (``g`` reaches
    zero without crossing) are located as roots of ``g'``.
    """
    from scipy.optimize import brentq

    r0 = lam * np.array([1.0, 0.0, 1.0])
    gen = bloch_generator(s)

    def gap(t):
        r = bloch_step(s, t) @ r0
        return r[0] - r[2]

    def slope(t):
        dr = gen @ (bloch_step(s, t) @ r0)
        return dr[0] - dr[2]

    scale = max(abs(lam), 1e-300)
    ts = np.linspace(0.0, horizon, n_scan)
    g = np.array([gap(t) for t in ts])
    d = np.array([slope(t) for t in ts])
    for k in range(1, n_scan):
        if g[k - 1] * g[k] < 0:
            return float(brentq(gap, ts[k - 1], ts[k], xtol=1e-14))
        if g[k] == 0.0:
            return float(ts[k])
        if d[k - 1] * d[k] < 0:
            t_ext = brentq(slope, ts[k - 1], ts[k], xtol=1e-15)
            if t_ext > 1e-9 and abs(gap(t_ext)) < 1e-10 * scale:
                return float(t_ext)
    return None
