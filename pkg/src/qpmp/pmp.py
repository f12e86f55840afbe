"""Maximum-principle bookkeeping along a trajectory.

For each output sample we evaluate the control Hamiltonian
``H = <p, L(s) rho>`` and, for the unitary kinds, the switching coordinates
``x_C = <p, K_C rho>`` and ``x_B = <p, K_B rho>``.  Both equal the
projections of the switching operator ``S = i[p, rho]`` on ``C`` and ``B``.
Arcs are labelled from the sign of ``x_B - x_C``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dynamics import (
    ControlProblem,
    CostateTrajectory,
    GridSpec,
    Schedule,
    Trajectory,
    propagate_pair,
)
from .operators import (
    HermitianOperator,
    _decoordinatize_array,
    as_matrix,
    commutator,
    coordinatize,
    hs_inner,
)

__all__ = [
    "PMPRecord",
    "ArcClassification",
    "PMPReport",
    "SwitchingTrajectory",
    "UnsupportedKindError",
    "pmp_records",
    "switching_operator",
    "propagate_switching",
    "classify_arcs",
    "singular_diagnostics",
    "LABELS",
]

LABELS = ("bang0", "bang1", "singular")
MIN_SINGULAR_SAMPLES = 5


class UnsupportedKindError(ValueError):
    """Operation is not defined for the problem's generator kind."""


@dataclass(frozen=True)
class PMPRecord:
    t: float
    s: float
    x_C: float
    x_B: float
    H_value: float
    switching_fn: float


@dataclass(frozen=True)
class ArcClassification:
    """Labelled partition of ``[0, t_f]``.

    ``consistency`` is the fraction of samples whose control value agrees
    with the label (any value agrees with a singular label).
    """

    intervals: tuple
    lambda_: float
    lambda_residual: float
    eps_band: float
    consistency: float
    sample_labels: tuple

    @property
    def labels(self) -> list[str]:
        return [lab for _, _, lab in self.intervals]

    @property
    def first(self) -> tuple:
        return self.intervals[0]

    @property
    def last(self) -> tuple:
        return self.intervals[-1]

    @property
    def has_singular(self) -> bool:
        return "singular" in self.labels


@dataclass(frozen=True, eq=False)
class PMPReport:
    """Per-sample maximum-principle quantities plus the arc classification.

    For ``redfield`` and ``game`` problems ``x_C`` and ``x_B`` are NaN and
    ``switching`` holds ``dH/ds = <p, (dL/ds) rho>``; no classification is
    attempted because the control enters the generator nonlinearly.
    """

    problem: ControlProblem
    schedule: Schedule
    trajectory: Trajectory
    costate: CostateTrajectory
    x_C: np.ndarray
    x_B: np.ndarray
    H: np.ndarray
    switching: np.ndarray
    lambda_: float
    lambda_residual: float
    classification: ArcClassification | None

    @property
    def t(self) -> np.ndarray:
        return self.trajectory.grid

    @property
    def s(self) -> np.ndarray:
        return self.trajectory.s_values

    @cached_property
    def records(self) -> list[PMPRecord]:
        return [
            PMPRecord(float(t), float(s), float(xc), float(xb), float(h), float(sw))
            for t, s, xc, xb, h, sw in zip(self.t, self.s, self.x_C, self.x_B, self.H, self.switching)
        ]

    @property
    def identity_residual(self) -> float:
        """``max |H - (x_C + s (x_B - x_C))|``; meaningful for closed problems."""
        return float(np.max(np.abs(self.H - (self.x_C + self.s * (self.x_B - self.x_C)))))

    @property
    def pairing(self) -> np.ndarray:
        """``<p(t), rho(t)>`` on the grid."""
        return np.einsum("ij,ij->i", self.costate.coords, self.trajectory.coords)

    @property
    def pairing_drift(self) -> float:
        pr = self.pairing
        return float(np.max(np.abs(pr - pr[-1])))

    @property
    def terminal_costate_error(self) -> float:
        return float(np.max(np.abs(self.costate.coords[-1] + self.problem.cost_vector)))

    def arc_residuals(self) -> list[float]:
        """``max |H - mean|`` over the samples strictly inside each arc."""
        edges = self.schedule.breakpoints()
        out = []
        for a, b in zip(edges[:-1], edges[1:]):
            mask = (self.t > a) & (self.t < b)
            if mask.sum() > 0:
                h = self.H[mask]
                out.append(float(np.max(np.abs(h - h.mean()))))
        return out

    @cached_property
    def switching_operators(self) -> np.ndarray:
        """``i[p, rho]`` at every sample, shape ``(n_samples, n, n)``."""
        p = self.costate.costates
        r = self.trajectory.states
        return 1j * (p @ r - r @ p)

    @property
    def cost(self) -> float:
        return float(self.trajectory.coords[-1] @ self.problem.cost_vector)

    def diagram_rows(self) -> list[tuple]:
        """Rows ``(t, x_C, x_B, s, label)`` for the switching diagram."""
        labels = self.classification.sample_labels if self.classification else ("",) * len(self.t)
        return list(zip(self.t, self.x_C, self.x_B, self.s, labels))


def _hamiltonian_values(problem: ControlProblem, svals: np.ndarray, rho: np.ndarray, p: np.ndarray):
    """``H`` and ``dH/ds`` per sample, grouping samples with equal control."""
    h = np.empty(len(svals))
    dh = np.empty(len(svals))
    for s in np.unique(svals):
        idx = np.nonzero(svals == s)[0]
        gen = problem.generator(float(s))
        der = problem.generator_derivative(float(s))
        h[idx] = np.einsum("ij,ij->i", p[idx], rho[idx] @ gen.T)
        dh[idx] = np.einsum("ij,ij->i", p[idx], rho[idx] @ der.T)
    return h, dh


def pmp_records(
    problem: ControlProblem,
    schedule: Schedule,
    grid_spec: GridSpec | None = None,
    *,
    trajectory: Trajectory | None = None,
    costate: CostateTrajectory | None = None,
    eps_band: float | None = None,
) -> PMPReport:
    """Maximum-principle quantities for ``schedule``.

    A precomputed ``trajectory`` must come with its ``costate``.
    """
    if trajectory is None:
        if costate is not None:
            raise ValueError("costate given without its trajectory")
        trajectory, costate = propagate_pair(problem, schedule, grid_spec)
    elif costate is None:
        raise ValueError("missing costate for the given trajectory")
    rho, p = trajectory.coords, costate.coords
    svals = trajectory.s_values
    h, dh = _hamiltonian_values(problem, svals, rho, p)
    if problem.is_affine:
        x_c = np.einsum("ij,ij->i", p, rho @ problem.problem_commutator.T)
        x_b = np.einsum("ij,ij->i", p, rho @ problem.driver_commutator.T)
        switching = x_b - x_c
    else:
        x_c = np.full(len(svals), np.nan)
        x_b = np.full(len(svals), np.nan)
        switching = dh
    lam = float(np.mean(h))
    resid = float(np.max(np.abs(h - lam)))
    report = PMPReport(problem, schedule, trajectory, costate, x_c, x_b, h, switching, lam, resid, None)
    if problem.is_affine:
        cls = classify_arcs(report, eps_band)
        object.__setattr__(report, "classification", cls)
    return report


def switching_operator(p, rho) -> HermitianOperator:
    """``S = i[p, rho]``."""
    return HermitianOperator(1j * commutator(p, rho))


@dataclass(frozen=True, eq=False)
class SwitchingTrajectory:
    grid: np.ndarray
    coords: np.ndarray

    @cached_property
    def operators(self) -> np.ndarray:
        return _decoordinatize_array(self.coords)

    def projection(self, x) -> np.ndarray:
        """``<X, S(t)>`` on the grid."""
        return self.coords @ coordinatize(x)


def propagate_switching(problem: ControlProblem, schedule: Schedule, S0, grid_spec: GridSpec | None = None) -> SwitchingTrajectory:
    """Integrate ``dS/dt = K_H S`` from ``S0``.

    Only unitary generators (``closed`` and ``joint``) propagate ``S`` this
    way; dissipative kinds raise :class:`UnsupportedKindError`.
    """
    if not problem.is_affine:
        raise UnsupportedKindError(f"switching-operator equation does not hold for kind {problem.kind!r}")
    s0 = as_matrix(S0)
    if s0.shape != (problem.dim, problem.dim):
        raise ValueError(f"S0 must be {problem.dim}x{problem.dim}")
    if abs(np.trace(s0)) > 1e-12 * max(1.0, np.linalg.norm(s0)):
        raise ValueError("S0 must be traceless")
    traj, _ = propagate_pair(problem, schedule, grid_spec, initial_vector=coordinatize(HermitianOperator(s0)), want_costate=False)
    return SwitchingTrajectory(traj.grid, traj.coords)


def _records_arrays(records):
    if isinstance(records, PMPReport):
        return records.t, records.s, records.switching, records.H
    if not records:
        raise ValueError("records must be nonempty")
    t = np.array([r.t for r in records])
    s = np.array([r.s for r in records])
    sw = np.array([r.switching_fn for r in records])
    h = np.array([r.H_value for r in records])
    return t, s, sw, h


def classify_arcs(records, eps_band: float | None = None, min_singular: int = MIN_SINGULAR_SAMPLES) -> ArcClassification:
    """Label intervals bang0 / bang1 / singular from the switching function.

    Samples with ``|x_B - x_C| <= eps_band`` form singular arcs only when at
    least ``min_singular`` consecutive samples lie in the band; shorter runs
    are switch points and take the label of the neighbouring bang.  The band
    defaults to ``1e-6 * max|x_B - x_C|`` with an absolute floor of ``1e-12``.
    """
    t, s, sw, h = _records_arrays(records)
    if len(t) == 0:
        raise ValueError("records must be nonempty")
    scale = float(np.max(np.abs(sw)))
    eps = max(1e-6 * scale, 1e-12) if eps_band is None else float(eps_band)
    raw = np.where(sw > eps, 1, np.where(sw < -eps, 0, 2))
    labels = raw.copy()
    n = len(t)
    k = 0
    while k < n:
        if raw[k] != 2:
            k += 1
            continue
        j = k
        while j < n and raw[j] == 2:
            j += 1
        if j - k < min_singular:
            if k > 0:
                fill = labels[k - 1]
            elif j < n:
                fill = raw[j]
            else:
                fill = 2
            labels[k:j] = fill
        k = j

    intervals = []
    start_t = float(t[0])
    for k in range(1, n + 1):
        if k == n or labels[k] != labels[k - 1]:
            if k == n:
                end_t = float(t[-1])
            else:
                end_t = _boundary_time(t, sw, k, labels)
            intervals.append((start_t, end_t, LABELS[labels[k - 1]]))
            start_t = end_t
    if len(intervals) > 1:
        intervals = [iv for iv in intervals if iv[1] > iv[0]] or intervals

    match = np.where(labels == 2, True, np.where(labels == 1, np.abs(s - 1.0) < 1e-9, np.abs(s) < 1e-9))
    lam = float(np.mean(h))
    return ArcClassification(
        intervals=tuple(intervals),
        lambda_=lam,
        lambda_residual=float(np.max(np.abs(h - lam))),
        eps_band=eps,
        consistency=float(np.mean(match)),
        sample_labels=tuple(LABELS[v] for v in labels),
    )


def _boundary_time(t, sw, k, labels) -> float:
    """Zero crossing between samples ``k-1`` and ``k`` when the sign flips."""
    a, b = sw[k - 1], sw[k]
    if labels[k - 1] != 2 and labels[k] != 2 and a * b < 0:
        return float(t[k - 1] + (t[k] - t[k - 1]) * a / (a - b))
    return float(0.5 * (t[k - 1] + t[k]))


def singular_diagnostics(S, B, C, s: float | None = None) -> dict:
    """Conditions that a singular arc imposes on the switching operator.

    ``c1 = <-i[C, B], S>`` (real form of the first-derivative condition),
    ``c2 = (1 - s) <[C, D], S> + s <[B, D], S>`` with ``D = [C, B]`` (only when
    ``s`` is given), and the feedback value of ``s`` that makes ``c2``
    vanish, or ``None`` when its denominator is below ``1e-10``.
    """
    S, B, C = as_matrix(S), as_matrix(B), as_matrix(C)
    d = commutator(C, B)
    cd = commutator(C, d)
    bd = commutator(B, d)
    c1 = hs_inner(-1j * d, S)
    a = hs_inner(cd, S)
    b = hs_inner(bd, S)
    denom = a - b
    feedback = a / denom if abs(denom) > 1e-10 else None
    c2 = None if s is None else (1 - s) * a + s * b
    return {"c1": c1, "c2": c2, "s_feedback": feedback}
