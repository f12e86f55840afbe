"""Schedules, control problems and state/costate propagation.

The generator is piecewise constant in time: constant on bang arcs and held
constant over each sample of an anneal arc.  Propagation therefore uses the
exact matrix exponential of the coordinatized generator on every step.  The
state and the costate are advanced with the *same* step propagators, so the
pairing ``<p, rho>`` is conserved to rounding error for every generator kind.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Sequence

import numpy as np
from scipy.linalg import expm

from .operators import (
    HermitianOperator,
    _decoordinatize_array,
    as_matrix,
    commutator,
    commutator_superop,
    coordinatize,
)

__all__ = [
    "Bang",
    "Anneal",
    "Schedule",
    "ControlProblem",
    "GridSpec",
    "Trajectory",
    "CostateTrajectory",
    "IntegrationError",
    "KINDS",
    "hamiltonian_at",
    "propagate_state",
    "propagate_costate",
    "propagate_pair",
    "evaluate_cost",
    "final_state_vector",
    "schedule_from_samples",
]

KINDS = ("closed", "joint", "redfield", "game")
DEFAULT_OUTPUT_POINTS = 2001


class IntegrationError(RuntimeError):
    """Propagation produced non-finite values."""

    def __init__(self, time: float, message: str = "non-finite state"):
        super().__init__(f"{message} at t={time:.17g}")
        self.time = time


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Bang:
    value: int
    duration: float

    def __post_init__(self):
        if self.value not in (0, 1):
            raise ValueError(f"bang value must be 0 or 1, got {self.value!r}")
        object.__setattr__(self, "value", int(self.value))
        object.__setattr__(self, "duration", float(self.duration))
        if not math.isfinite(self.duration) or self.duration < 0:
            raise ValueError(f"arc duration must be finite and non-negative, got {self.duration}")


@dataclass(frozen=True)
class Anneal:
    """Arc with sampled control values held constant over equal sub-intervals."""

    samples: tuple
    duration: float

    def __post_init__(self):
        samples = tuple(float(x) for x in np.atleast_1d(np.asarray(self.samples, dtype=float)))
        if not samples:
            raise ValueError("anneal arc needs at least one sample")
        if any(not (0.0 <= x <= 1.0) for x in samples):
            raise ValueError("anneal samples must lie in [0, 1]")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "duration", float(self.duration))
        if not math.isfinite(self.duration) or self.duration < 0:
            raise ValueError(f"arc duration must be finite and non-negative, got {self.duration}")


@dataclass(frozen=True)
class Schedule:
    """Ordered arcs covering ``[0, t_f]``.  Zero-duration arcs are dropped."""

    arcs: tuple = ()

    def __post_init__(self):
        kept = []
        for arc in self.arcs:
            if not isinstance(arc, (Bang, Anneal)):
                raise TypeError(f"unsupported arc {arc!r}")
            if arc.duration == 0.0:
                warnings.warn("dropping zero-duration arc", stacklevel=3)
                continue
            kept.append(arc)
        object.__setattr__(self, "arcs", tuple(kept))

    @classmethod
    def bangs(cls, first_value: int, durations: Sequence[float]) -> "Schedule":
        """Alternating bang arcs starting at ``first_value``."""
        return cls(tuple(Bang((first_value + k) % 2, d) for k, d in enumerate(durations)))

    @classmethod
    def constant(cls, value: float, duration: float) -> "Schedule":
        if value in (0, 1):
            return cls((Bang(int(value), duration),))
        return cls((Anneal((value,), duration),))

    @property
    def t_f(self) -> float:
        return float(math.fsum(a.duration for a in self.arcs))

    def segments(self) -> list[tuple[float, float]]:
        """Piecewise-constant pieces ``(s, duration)`` in time order."""
        out = []
        for arc in self.arcs:
            if isinstance(arc, Bang):
                out.append((float(arc.value), arc.duration))
            else:
                piece = arc.duration / len(arc.samples)
                out.extend((s, piece) for s in arc.samples)
        return out

    def breakpoints(self) -> np.ndarray:
        """Arc boundary times including 0 and ``t_f``."""
        return np.concatenate([[0.0], np.cumsum([a.duration for a in self.arcs])])

    def value_at(self, t) -> np.ndarray:
        """Right-continuous control value; the last piece also covers ``t_f``."""
        segs = self.segments()
        if not segs:
            return np.zeros_like(np.asarray(t, dtype=float))
        s = np.array([v for v, _ in segs])
        ends = np.cumsum([d for _, d in segs])
        idx = np.searchsorted(ends, np.asarray(t, dtype=float), side="right")
        return s[np.minimum(idx, len(s) - 1)]

    def to_json(self) -> dict:
        arcs = []
        for a in self.arcs:
            if isinstance(a, Bang):
                arcs.append({"type": "bang", "s": a.value, "dt": a.duration})
            else:
                arcs.append({"type": "anneal", "dt": a.duration, "samples": list(a.samples)})
        return {"arcs": arcs}

    @classmethod
    def from_json(cls, data: dict) -> "Schedule":
        if "arcs" not in data:
            raise ValueError("schedule: missing field 'arcs'")
        arcs = []
        for k, a in enumerate(data["arcs"]):
            kind = a.get("type")
            if kind == "bang":
                arcs.append(Bang(a["s"], a["dt"]))
            elif kind == "anneal":
                arcs.append(Anneal(tuple(a["samples"]), a["dt"]))
            else:
                raise ValueError(f"schedule: arcs[{k}].type must be 'bang' or 'anneal'")
        return cls(tuple(arcs))


def schedule_from_samples(samples: Sequence[float], t_f: float, tol: float = 0.0) -> Schedule:
    """Group a piecewise-constant control vector into bang and anneal arcs.

    Runs of samples equal to 0 or 1 (within ``tol``) become bangs, anything
    else is collected into anneal arcs.  The represented control is unchanged.
    """
    s = np.clip(np.asarray(samples, dtype=float), 0.0, 1.0)
    if t_f == 0 or len(s) == 0:
        return Schedule(())
    h = t_f / len(s)
    labels = np.where(s <= tol, 0, np.where(s >= 1 - tol, 1, -1))
    arcs = []
    start = 0
    for k in range(1, len(s) + 1):
        if k == len(s) or labels[k] != labels[start]:
            n = k - start
            if labels[start] >= 0:
                arcs.append(Bang(int(labels[start]), n * h))
            else:
                arcs.append(Anneal(tuple(s[start:k]), n * h))
            start = k
    return Schedule(tuple(arcs))


# ---------------------------------------------------------------------------
# control problem


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Cost ``Tr(C rho(t_f))`` under ``H(s) = C + s (B - C)``.

    ``kind`` selects the generator: ``closed`` (von Neumann), ``joint``
    (system plus finite environment, ``model`` a ``JointModel``), ``redfield``
    or ``game`` (``model`` carries the dissipator data).  ``B``, ``C`` and
    ``rho0`` always refer to the system.
    """

    B: Any
    C: Any
    rho0: Any
    t_f: float
    kind: str = "closed"
    model: Any = None
    commuting: bool = field(init=False, default=False)

    def __post_init__(self):
        b, c, r = (x if isinstance(x, HermitianOperator) else HermitianOperator(x) for x in (self.B, self.C, self.rho0))
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "rho0", r)
        if not (b.dim == c.dim == r.dim):
            raise ValueError(f"dimension mismatch: B {b.dim}, C {c.dim}, rho0 {r.dim}")
        t_f = float(self.t_f)
        if not math.isfinite(t_f) or t_f < 0:
            raise ValueError("t_f must be finite and non-negative")
        object.__setattr__(self, "t_f", t_f)
        if abs(r.trace() - 1.0) > 1e-10:
            raise ValueError(f"rho0 must have unit trace, got {r.trace():.12g}")
        if r.eigvalsh()[0] < -1e-10:
            raise ValueError("rho0 must be positive semidefinite")
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.kind != "closed":
            if self.model is None:
                raise ValueError(f"kind {self.kind!r} requires a model")
            if not (np.allclose(as_matrix(self.model.B), b.matrix) and np.allclose(as_matrix(self.model.C), c.matrix)):
                raise ValueError("model B/C differ from the problem's B/C")
        comm = float(np.linalg.norm(commutator(b, c)))
        object.__setattr__(self, "commuting", comm < 1e-12)
        if self.commuting:
            warnings.warn("[B, C] = 0: the control has no effect on the cost", stacklevel=3)

    @classmethod
    def for_model(cls, model, rho0, t_f: float) -> "ControlProblem":
        return cls(model.B, model.C, rho0, t_f, kind=model.kind, model=model)

    def with_tf(self, t_f: float) -> "ControlProblem":
        return replace(self, t_f=t_f)

    def with_rho0(self, rho0) -> "ControlProblem":
        return replace(self, rho0=rho0)

    # -- embedded operators ---------------------------------------------------
    @property
    def system_dim(self) -> int:
        return self.B.dim

    @cached_property
    def dim(self) -> int:
        return self.model.dim if self.kind == "joint" else self.system_dim

    def embed(self, x) -> np.ndarray:
        """System operator as it acts on the propagated space."""
        m = as_matrix(x)
        return self.model.embed(m) if self.kind == "joint" else m

    @cached_property
    def initial_state(self) -> np.ndarray:
        if self.kind == "joint":
            return self.model.joint_state(self.rho0.matrix)
        return self.rho0.matrix

    @cached_property
    def initial_vector(self) -> np.ndarray:
        return coordinatize(self.initial_state)

    @cached_property
    def cost_operator(self) -> np.ndarray:
        return self.embed(self.C)

    @cached_property
    def cost_vector(self) -> np.ndarray:
        return coordinatize(self.cost_operator)

    @cached_property
    def driver_commutator(self) -> np.ndarray:
        """Coordinatized ``K_B`` on the propagated space."""
        return commutator_superop(self.embed(self.B)).matrix

    @cached_property
    def problem_commutator(self) -> np.ndarray:
        """Coordinatized ``K_C`` on the propagated space."""
        return commutator_superop(self.embed(self.C)).matrix

    # -- generators -----------------------------------------------------------
    @property
    def is_affine(self) -> bool:
        """``L(s) = L0 + s L1`` with antisymmetric ``L0, L1`` (unitary kinds)."""
        return self.kind in ("closed", "joint")

    @cached_property
    def _affine_parts(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "closed":
            return self.problem_commutator, self.driver_commutator - self.problem_commutator
        return self.model.generator(0.0), self.model.generator_derivative(0.0)

    def generator(self, s: float) -> np.ndarray:
        """Coordinatized generator ``L(s)``."""
        if self.is_affine:
            l0, l1 = self._affine_parts
            return l0 + s * l1
        return self.model.generator(s)

    def generator_derivative(self, s: float) -> np.ndarray:
        """``dL/ds`` at ``s``."""
        if self.is_affine:
            return self._affine_parts[1]
        return self.model.generator_derivative(s)


def hamiltonian_at(problem: ControlProblem, s: float) -> HermitianOperator:
    """System Hamiltonian ``C + s (B - C)``."""
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"s must lie in [0, 1], got {s}")
    return HermitianOperator(problem.C.matrix + s * (problem.B.matrix - problem.C.matrix))


# ---------------------------------------------------------------------------
# propagation


@dataclass(frozen=True)
class GridSpec:
    """Output grid size and the maximum internal step on anneal arcs."""

    n_out: int = DEFAULT_OUTPUT_POINTS
    h: float | None = None

    def __post_init__(self):
        if self.n_out < 2:
            raise ValueError("output grid needs at least 2 points")
        if self.h is not None and not self.h > 0:
            raise ValueError("step h must be positive")

    def step(self, t_f: float) -> float:
        return self.h if self.h is not None else t_f / 1000.0


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States on the output grid, stored as real basis coordinates."""

    grid: np.ndarray
    coords: np.ndarray
    s_values: np.ndarray
    dim: int

    @cached_property
    def states(self) -> np.ndarray:
        """Stack of state matrices, shape ``(len(grid), dim, dim)``."""
        return _decoordinatize_array(self.coords)

    def state(self, i: int) -> HermitianOperator:
        return HermitianOperator(self.states[i])

    @property
    def final_state(self) -> HermitianOperator:
        return self.state(-1)

    @cached_property
    def traces(self) -> np.ndarray:
        return np.real(np.trace(self.states, axis1=1, axis2=2))

    @cached_property
    def purities(self) -> np.ndarray:
        # Tr(rho^2) = |coords|^2 in an orthonormal basis
        return np.einsum("ij,ij->i", self.coords, self.coords)

    @cached_property
    def spectra(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.states)

    @property
    def min_eigs(self) -> np.ndarray:
        return self.spectra[:, 0]

    def expectation(self, op) -> np.ndarray:
        return self.coords @ coordinatize(op)


@dataclass(frozen=True, eq=False)
class CostateTrajectory:
    grid: np.ndarray
    coords: np.ndarray
    dim: int

    @cached_property
    def costates(self) -> np.ndarray:
        return _decoordinatize_array(self.coords)

    def costate(self, i: int) -> HermitianOperator:
        return HermitianOperator(self.costates[i])


class _StepCache:
    """Memoized ``expm(dt L(s))`` keyed on exact ``(s, dt)``."""

    def __init__(self, problem: ControlProblem):
        self.problem = problem
        self._gen: dict[float, np.ndarray] = {}
        self._exp: dict[tuple[float, float], np.ndarray] = {}

    def generator(self, s: float) -> np.ndarray:
        g = self._gen.get(s)
        if g is None:
            g = self._gen[s] = self.problem.generator(s)
        return g

    def __call__(self, s: float, dt: float) -> np.ndarray:
        key = (s, dt)
        e = self._exp.get(key)
        if e is None:
            e = self._exp[key] = expm(dt * self.generator(s))
        return e


def _plan_steps(schedule: Schedule, t_f: float, n_out: int, h_max: float):
    """Split the schedule into constant-control steps aligned with the output grid.

    Step boundaries are the union of piece boundaries (anneal pieces split so
    no step exceeds ``h_max``) and output times.  Returns ``(grid, steps,
    marks, out_s)``: ``steps`` is a list of ``(s, dt)`` and ``marks[k]`` the
    number of steps completed at output point ``k``.
    """
    grid = np.linspace(0.0, t_f, n_out)
    h_out = t_f / (n_out - 1)
    tol = 1e-12 * max(1.0, t_f)
    values, ends = [], []
    t = 0.0
    for arc in schedule.arcs:
        if isinstance(arc, Bang):
            pieces = [(float(arc.value), arc.duration, 1)]
        else:
            d = arc.duration / len(arc.samples)
            pieces = [(s, d, max(1, math.ceil(d / h_max - 1e-9))) for s in arc.samples]
        for s, d, n_sub in pieces:
            for j in range(n_sub):
                values.append(s)
                ends.append(t + d * (j + 1) / n_sub)
            t += d
    ends[-1] = t_f
    ends = np.array(ends)
    values = np.array(values)
    cuts = np.unique(np.concatenate([grid, ends]))
    keep = [0.0]
    for c in cuts[1:]:
        if c - keep[-1] > tol:
            keep.append(c)
    keep[-1] = t_f
    cuts = np.array(keep)
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    piece = np.minimum(np.searchsorted(ends, mids, side="right"), len(values) - 1)
    steps = []
    for k in range(len(mids)):
        dt = cuts[k + 1] - cuts[k]
        # identical dt on full grid steps gives propagator cache hits
        if abs(dt - h_out) < tol:
            dt = h_out
        steps.append((float(values[piece[k]]), float(dt)))
    marks = np.abs(cuts[None, :] - grid[:, None]).argmin(axis=1).tolist()
    out_s = schedule.value_at(grid)
    return grid, steps, marks, out_s


def _check_schedule(problem: ControlProblem, schedule: Schedule):
    if abs(schedule.t_f - problem.t_f) > 1e-9 * max(1.0, problem.t_f):
        raise ValueError(f"schedule duration {schedule.t_f:.12g} differs from t_f={problem.t_f:.12g}")


def propagate_pair(problem: ControlProblem, schedule: Schedule, grid_spec: GridSpec | None = None,
                   initial_vector: np.ndarray | None = None, want_costate: bool = True):
    """Forward state and backward costate on a shared step decomposition."""
    grid_spec = grid_spec or GridSpec()
    _check_schedule(problem, schedule)
    rho = problem.initial_vector if initial_vector is None else np.asarray(initial_vector, dtype=float)
    if problem.t_f == 0.0 or not schedule.arcs:
        grid = np.zeros(1)
        s0 = np.zeros(1)
        traj = Trajectory(grid, rho[None, :].copy(), s0, problem.dim)
        cost = CostateTrajectory(grid, -problem.cost_vector[None, :].copy(), problem.dim)
        return traj, (cost if want_costate else None)
    grid, steps, marks, out_s = _plan_steps(schedule, problem.t_f, grid_spec.n_out, grid_spec.step(problem.t_f))
    cache = _StepCache(problem)
    props = [cache(s, dt) for s, dt in steps]
    m = len(rho)
    states = np.empty((len(grid), m))
    states[0] = rho
    x = rho
    k_out = 1
    t_now = 0.0
    for j, (e, (_, dt)) in enumerate(zip(props, steps), start=1):
        x = e @ x
        t_now += dt
        if not np.all(np.isfinite(x)):
            raise IntegrationError(t_now)
        while k_out < len(grid) and marks[k_out] == j:
            states[k_out] = x
            k_out += 1
    while k_out < len(grid):
        states[k_out] = x
        k_out += 1
    traj = Trajectory(grid, states, out_s, problem.dim)
    if not want_costate:
        return traj, None
    costates = np.empty_like(states)
    p = -problem.cost_vector
    costates[-1] = p
    k_out = len(grid) - 1
    t_now = problem.t_f
    for j in range(len(props), 0, -1):
        # p(t - dt) = expm(dt L)^T p(t)
        p = props[j - 1].T @ p
        t_now -= steps[j - 1][1]
        if not np.all(np.isfinite(p)):
            raise IntegrationError(t_now, "non-finite costate")
        while k_out > 0 and marks[k_out - 1] == j - 1:
            k_out -= 1
            costates[k_out] = p
    while k_out > 0:
        k_out -= 1
        costates[k_out] = p
    return traj, CostateTrajectory(grid, costates, problem.dim)


def propagate_state(problem: ControlProblem, schedule: Schedule, grid_spec: GridSpec | None = None) -> Trajectory:
    """State trajectory on the uniform output grid."""
    return propagate_pair(problem, schedule, grid_spec, want_costate=False)[0]


def propagate_costate(problem: ControlProblem, schedule: Schedule, grid_spec: GridSpec | None = None) -> CostateTrajectory:
    """Costate from ``p(t_f) = -C`` (``-C (x) I`` for the joint model)."""
    return propagate_pair(problem, schedule, grid_spec)[1]


def evaluate_cost(trajectory: Trajectory, problem: ControlProblem) -> float:
    """``Tr(C rho(t_f))`` with ``C`` embedded for the joint model."""
    return float(trajectory.coords[-1] @ problem.cost_vector)


def final_state_vector(problem: ControlProblem, schedule: Schedule) -> np.ndarray:
    """Coordinates of ``rho(t_f)`` without building the output grid."""
    x = problem.initial_vector
    for s, dt in schedule.segments():
        x = expm(dt * problem.generator(s)) @ x
    if not np.all(np.isfinite(x)):
        raise IntegrationError(problem.t_f)
    return x
