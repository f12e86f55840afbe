"""Schedule search with maximum-principle certification.

Two parameterizations are supported:

* bang sequences ``0, 1, 0, ...`` with free durations summing to ``t_f``;
  durations are ``t_f * softmax(z)`` and ``z`` is searched with Nelder-Mead
  from seeded restarts;
* a piecewise-constant control ``s in [0, 1]^N`` searched by projected
  gradient descent, with the exact gradient of the discretized cost from an
  adjoint sweep.

Every returned schedule carries the full :class:`~qpmp.pmp.PMPReport`.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import eigh, expm, expm_frechet
from scipy.optimize import minimize

from .dynamics import Bang, ControlProblem, GridSpec, Schedule, schedule_from_samples
from .operators import as_matrix, commutator
from .pmp import PMPReport, pmp_records

__all__ = [
    "OptimizeConfig",
    "OptimizationResult",
    "optimize_switch_times",
    "optimize_discretized",
    "adjoint_gradient",
    "finite_difference_gradient",
    "gradient_mismatch",
    "discretized_cost",
    "estimate_critical_time",
    "short_time_cost_coefficient",
    "GradientCheckError",
    "worker_count",
]


def worker_count() -> int:
    """Parallel worker cap from ``QOC_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("QOC_THREADS", "1")))
    except ValueError:
        return 1


class GradientCheckError(RuntimeError):
    """Adjoint gradient disagrees with finite differences."""


@dataclass(frozen=True)
class OptimizeConfig:
    restarts: int = 16
    seed: int = 0
    max_iter: int = 5000
    rtol: float = 1e-10
    stall_iters: int = 20
    grid: GridSpec = field(default_factory=GridSpec)
    gradient_check: bool = True
    gradient_tol: float = 1e-5
    workers: int | None = None
    initial_durations: tuple = ()

    def n_workers(self) -> int:
        return self.workers if self.workers is not None else worker_count()


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    schedule: Schedule
    cost: float
    lambda_: float
    lambda_residual: float
    pmp_consistency: float
    restarts_used: int
    converged: bool
    report: PMPReport | None
    mode: str
    params: np.ndarray
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def classification(self):
        return None if self.report is None else self.report.classification

    @property
    def durations(self) -> list[float]:
        return [a.duration for a in self.schedule.arcs]

    @property
    def switch_times(self) -> list[float]:
        return [float(t) for t in self.schedule.breakpoints()[1:-1]]


# ---------------------------------------------------------------------------
# exponentials


class _SpectralGenerator:
    """``expm(t L)`` for a real antisymmetric ``L`` via ``eigh(i L)``."""

    def __init__(self, gen: np.ndarray):
        w, v = eigh(1j * gen)
        self.w = w
        self.v = v
        self.vh = v.conj().T

    def exp(self, t: float) -> np.ndarray:
        return ((self.v * np.exp(-1j * self.w * t)) @ self.vh).real


class _BangEvaluator:
    """Fast final cost of an alternating bang sequence."""

    def __init__(self, problem: ControlProblem, first_value: int):
        self.problem = problem
        self.first = first_value
        self.rho0 = problem.initial_vector
        self.c = problem.cost_vector
        if problem.is_affine:
            self.gens = [_SpectralGenerator(problem.generator(v)) for v in (0.0, 1.0)]
        else:
            self.gens = None
            self.raw = [problem.generator(v) for v in (0.0, 1.0)]

    def _exp(self, v: int, d: float) -> np.ndarray:
        return self.gens[v].exp(d) if self.gens else expm(d * self.raw[v])

    def _gen(self, v: int) -> np.ndarray:
        return self.problem.generator(float(v)) if self.gens else self.raw[v]

    def cost(self, durations: Sequence[float]) -> float:
        x = self.rho0
        for k, d in enumerate(durations):
            x = self._exp((self.first + k) % 2, d) @ x
        return float(self.c @ x)

    def cost_and_gradient(self, durations: Sequence[float]):
        """Cost and ``dJ/dtau_k = -H_k``, the control Hamiltonian on arc ``k``."""
        vals = [(self.first + k) % 2 for k in range(len(durations))]
        props = [self._exp(v, d) for v, d in zip(vals, durations)]
        states = [self.rho0]
        for e in props:
            states.append(e @ states[-1])
        p = -self.c
        grad = np.empty(len(durations))
        for k in range(len(durations) - 1, -1, -1):
            # H is constant on the arc; evaluate at its end
            grad[k] = -(p @ (self._gen(vals[k]) @ states[k + 1]))
            p = props[k].T @ p
        return float(self.c @ states[-1]), grad


def _durations(z: np.ndarray, t_f: float) -> np.ndarray:
    full = np.concatenate([z, [0.0]])
    full = full - full.max()
    w = np.exp(full)
    return t_f * w / w.sum()


def _logits(durations: Sequence[float]) -> np.ndarray:
    d = np.maximum(np.asarray(durations, dtype=float), 1e-300)
    lg = np.log(d)
    return lg[:-1] - lg[-1]


def _nelder_mead(fun, z0: np.ndarray, config: OptimizeConfig, step: float = 0.5):
    """Nelder-Mead with the relative-stall stopping rule."""
    n = len(z0)
    simplex = np.vstack([z0] + [z0 + step * np.eye(n)[i] for i in range(n)])
    history: list[float] = []

    def callback(intermediate_result):
        history.append(float(intermediate_result.fun))
        k = config.stall_iters
        if len(history) > k:
            old, new = history[-k - 1], history[-1]
            if abs(old - new) <= config.rtol * (1.0 + abs(new)):
                raise StopIteration

    res = minimize(
        fun,
        z0,
        method="Nelder-Mead",
        callback=callback,
        options={
            "initial_simplex": simplex,
            "maxiter": config.max_iter,
            "maxfev": 4 * config.max_iter,
            "xatol": 1e-12,
            "fatol": 1e-16,
        },
    )
    # status 99 is scipy's code for a callback StopIteration, i.e. the stall rule
    converged = bool(res.success) or res.status == 99
    return res.x, float(res.fun), converged and np.isfinite(res.fun), int(res.nit)


def _logit_gradient(grad_tau: np.ndarray, tau: np.ndarray, t_f: float) -> np.ndarray:
    """Chain rule through ``tau = t_f softmax([z, 0])``."""
    g = tau * (grad_tau - (grad_tau @ tau) / t_f)
    return g[:-1]


def _gradient_polish(evaluator: _BangEvaluator, z0: np.ndarray, t_f: float):
    """BFGS refinement with the exact duration gradient."""

    def fg(z):
        tau = _durations(z, t_f)
        c, g = evaluator.cost_and_gradient(tau)
        return c, _logit_gradient(g, tau, t_f)

    res = minimize(fg, z0, jac=True, method="BFGS", options={"gtol": 1e-14, "maxiter": 500})
    return res.x, float(res.fun)


def _merge_short_arcs(first: int, durations: np.ndarray, t_f: float, min_frac: float = 1e-6):
    """Drop negligible arcs and merge equal neighbours; returns ``(first, durations)``."""
    vals = [(first + k) % 2 for k in range(len(durations))]
    keep = [(v, d) for v, d in zip(vals, durations) if d > min_frac * t_f]
    if not keep:
        return first, np.asarray(durations)
    merged = [list(keep[0])]
    for v, d in keep[1:]:
        if v == merged[-1][0]:
            merged[-1][1] += d
        else:
            merged.append([v, d])
    d = np.array([m[1] for m in merged])
    return merged[0][0], d * (t_f / d.sum())


def _certify(problem: ControlProblem, schedule: Schedule, grid: GridSpec) -> PMPReport:
    return pmp_records(problem, schedule, grid)


def _result_from_schedule(problem, schedule, cost, config, mode, params, restarts, converged, iterations, diagnostics):
    report = _certify(problem, schedule, config.grid) if problem.t_f > 0 else None
    if report is None:
        lam, resid, cons = 0.0, 0.0, 1.0
    else:
        lam, resid = report.lambda_, report.lambda_residual
        cons = report.classification.consistency if report.classification else float("nan")
    return OptimizationResult(
        schedule=schedule,
        cost=float(cost),
        lambda_=lam,
        lambda_residual=resid,
        pmp_consistency=cons,
        restarts_used=restarts,
        converged=converged,
        report=report,
        mode=mode,
        params=np.asarray(params, dtype=float),
        iterations=iterations,
        diagnostics=diagnostics,
    )


def optimize_switch_times(problem: ControlProblem, n_arcs: int = 2, config: OptimizeConfig | None = None,
                          first_value: int = 0) -> OptimizationResult:
    """Best alternating bang sequence with ``n_arcs`` arcs.

    Restart 0 starts from equal durations, further restarts from seeded
    random logits, and any ``config.initial_durations`` are tried as well.
    Arcs that shrink to negligible length are merged away and the reduced
    sequence is polished once more.
    """
    config = config or OptimizeConfig()
    if n_arcs < 2 or n_arcs % 2:
        raise ValueError("n_arcs must be even and at least 2")
    t_f = problem.t_f
    if t_f == 0:
        return _result_from_schedule(problem, Schedule(()), float(problem.cost_vector @ problem.initial_vector), config,
                                     "bang_times", [], 0, True, 0, {})
    evaluator = _BangEvaluator(problem, first_value)
    rng = np.random.default_rng(config.seed)
    starts = [np.zeros(n_arcs - 1)]
    for _ in range(max(0, config.restarts - 1)):
        starts.append(rng.normal(scale=1.0, size=n_arcs - 1))
    for d in config.initial_durations:
        d = np.asarray(d, dtype=float)
        if len(d) == n_arcs and np.all(d > 0):
            starts.append(_logits(d * (t_f / d.sum())))

    def fun(z):
        return evaluator.cost(_durations(z, t_f))

    def run(z0):
        try:
            return _nelder_mead(fun, z0, config)
        except (FloatingPointError, np.linalg.LinAlgError):
            return z0, math.inf, False, 0

    workers = config.n_workers()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, starts))
    else:
        outcomes = [run(z0) for z0 in starts]
    finite = [o for o in outcomes if np.isfinite(o[1])]
    diagnostics = {"restart_costs": [o[1] for o in outcomes]}
    if not finite:
        sched = Schedule.bangs(first_value, [t_f / n_arcs] * n_arcs)
        return OptimizationResult(sched, math.nan, math.nan, math.nan, math.nan, len(starts), False, None,
                                  "bang_times", np.full(n_arcs, t_f / n_arcs), 0, diagnostics)
    # deterministic fold by cost, ties broken by restart order
    best = min(finite, key=lambda o: o[1])
    z_best, cost = best[0], best[1]
    z_pol, c_pol = _gradient_polish(evaluator, z_best, t_f)
    if c_pol <= cost:
        z_best, cost = z_pol, c_pol
    durations = _durations(z_best, t_f)
    first = first_value
    first_m, dur_m = _merge_short_arcs(first_value, durations, t_f)
    if len(dur_m) < len(durations):
        if len(dur_m) >= 2:
            ev2 = _BangEvaluator(problem, first_m)
            z2, c2 = _gradient_polish(ev2, _logits(dur_m), t_f)
            d2 = _durations(z2, t_f)
        else:
            d2 = dur_m
            c2 = _BangEvaluator(problem, first_m).cost(d2)
        if c2 <= cost + 1e-12 * (1 + abs(cost)):
            first, durations, cost = first_m, d2, c2
            diagnostics["merged_arcs"] = n_arcs - len(d2)
    schedule = Schedule.bangs(first, durations)
    return _result_from_schedule(problem, schedule, cost, config, "bang_times", durations, len(starts),
                                 any(o[2] for o in finite),
                                 sum(o[3] for o in outcomes), diagnostics)


# ---------------------------------------------------------------------------
# discretized controls


class _Discretization:
    """Exact cost and gradient of the piecewise-constant problem on coordinates.

    Used for the dissipative kinds; each step is ``expm(h L(s_k))`` and the
    gradient uses its Frechet derivative.
    """

    def __init__(self, problem: ControlProblem, n: int):
        self.problem = problem
        self.n = n
        self.h = problem.t_f / n
        self.rho0 = problem.initial_vector
        self.c = problem.cost_vector

    def propagators(self, x):
        return np.stack([expm(self.h * self.problem.generator(float(s))) for s in x])

    def cost(self, x) -> float:
        e = self.propagators(x)
        x_f = self.rho0
        for k in range(self.n):
            x_f = e[k] @ x_f
        return float(self.c @ x_f)

    def cost_and_gradient(self, x):
        e = self.propagators(x)
        states = np.empty((self.n + 1, len(self.rho0)))
        states[0] = self.rho0
        for k in range(self.n):
            states[k + 1] = e[k] @ states[k]
        co = np.empty((self.n + 1, len(self.c)))
        co[-1] = -self.c
        for k in range(self.n - 1, -1, -1):
            co[k] = e[k].T @ co[k + 1]
        grad = np.empty(self.n)
        for k in range(self.n):
            s = float(x[k])
            _, de = expm_frechet(self.h * self.problem.generator(s), self.h * self.problem.generator_derivative(s))
            grad[k] = -co[k + 1] @ (de @ states[k])
        return float(self.c @ states[-1]), grad


class _UnitaryDiscretization:
    """Same quantities for unitary kinds, computed on ``d x d`` matrices.

    Steps are ``rho -> U rho U^dagger`` with ``U = exp(-i h H(s_k))``; the
    derivative of ``U`` in ``s_k`` is the divided-difference (Daleckii-Krein)
    formula in the eigenbasis of ``H(s_k)``.
    """

    def __init__(self, problem: ControlProblem, n: int):
        self.n = n
        self.h = problem.t_f / n
        if problem.kind == "joint":
            h0 = problem.model.H_tot(0.0)
            self.h0, self.h1 = h0, problem.model.H_tot(1.0) - h0
        else:
            self.h0, self.h1 = problem.C.matrix, problem.B.matrix - problem.C.matrix
        self.rho0 = problem.initial_state
        self.c = problem.cost_operator

    def _steps(self, x):
        e, v = np.linalg.eigh(self.h0[None] + x[:, None, None] * self.h1[None])
        phase = np.exp(-1j * self.h * e)
        vh = np.conj(np.swapaxes(v, 1, 2))
        return (v * phase[:, None, :]) @ vh, e, v, vh, phase

    def _forward(self, u):
        states = np.empty((self.n + 1,) + self.rho0.shape, dtype=complex)
        states[0] = self.rho0
        for k in range(self.n):
            states[k + 1] = u[k] @ states[k] @ u[k].conj().T
        return states

    def _expectation(self, rho) -> float:
        return float(np.real(np.vdot(self.c, rho)))

    def cost(self, x) -> float:
        u = self._steps(x)[0]
        rho = self.rho0
        for k in range(self.n):
            rho = u[k] @ rho @ u[k].conj().T
        return self._expectation(rho)

    def cost_and_gradient(self, x):
        u, e, v, vh, phase = self._steps(x)
        states = self._forward(u)
        # adjoint of the cost: M_N = C, M_k = U_k^dagger M_{k+1} U_k
        m = np.empty_like(states)
        m[-1] = self.c
        for k in range(self.n - 1, -1, -1):
            m[k] = u[k].conj().T @ m[k + 1] @ u[k]
        delta = e[:, :, None] - e[:, None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(np.abs(delta) > 1e-12, np.expm1(-1j * self.h * delta) / delta,
                             -1j * self.h * (1 - 0.5j * self.h * delta))
        du = v @ ((phase[:, None, :] * ratio) * (vh @ self.h1 @ v)) @ vh
        inner = du @ states[:-1] @ np.conj(np.swapaxes(u, 1, 2))
        grad = 2.0 * np.real(np.einsum("kij,kji->k", m[1:], inner))
        return self._expectation(states[-1]), grad


def _discretization(problem: ControlProblem, n: int):
    return _UnitaryDiscretization(problem, n) if problem.is_affine else _Discretization(problem, n)


def discretized_cost(problem: ControlProblem, s_vec: Sequence[float]) -> float:
    s = np.asarray(s_vec, dtype=float)
    return _discretization(problem, len(s)).cost(s)


def adjoint_gradient(problem: ControlProblem, s_vec: Sequence[float]) -> np.ndarray:
    """Exact gradient of the discretized cost with respect to each sample.

    To leading order in the step ``h`` this is ``-(x_B - x_C)(t_i) h`` for the
    unitary kinds; the exact discrete value differentiates each step's
    propagator (divided differences in the eigenbasis of ``H(s)`` for the
    unitary kinds, the Frechet derivative of ``expm(h L(s))`` otherwise).
    """
    s = np.asarray(s_vec, dtype=float)
    return _discretization(problem, len(s)).cost_and_gradient(s)[1]


def finite_difference_gradient(problem: ControlProblem, s_vec: Sequence[float], step: float = 1e-6,
                               indices: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of the discretized cost; NaN where not evaluated."""
    s = np.asarray(s_vec, dtype=float)
    disc = _discretization(problem, len(s))
    out = np.full(len(s), np.nan)
    for k in range(len(s)) if indices is None else indices:
        up, dn = s.copy(), s.copy()
        up[k] += step
        dn[k] -= step
        out[k] = (disc.cost(up) - disc.cost(dn)) / (2 * step)
    return out


def gradient_mismatch(problem: ControlProblem, s_vec: Sequence[float], step: float = 1e-6,
                      indices: Sequence[int] | None = None) -> float:
    """``max|g_adj - g_fd| / max|g_fd|`` over the checked components."""
    g = adjoint_gradient(problem, s_vec)
    fd = finite_difference_gradient(problem, s_vec, step, indices)
    mask = ~np.isnan(fd)
    scale = max(float(np.max(np.abs(fd[mask]))), 1e-300)
    return float(np.max(np.abs(g[mask] - fd[mask])) / scale)


def optimize_discretized(problem: ControlProblem, N: int, config: OptimizeConfig | None = None,
                         init: float | Sequence[float] = 0.5) -> OptimizationResult:
    """Projected gradient descent on ``s in [0, 1]^N``.

    Steps use the Barzilai-Borwein length with Armijo backtracking.  The
    adjoint gradient is checked against central differences before the run
    and a mismatch above ``config.gradient_tol`` raises
    :class:`GradientCheckError`.
    """
    config = config or OptimizeConfig()
    if N < 10:
        raise ValueError("N must be at least 10")
    x = np.clip(np.broadcast_to(np.asarray(init, dtype=float), (N,)).copy(), 0.0, 1.0)
    if problem.t_f == 0:
        j0 = float(problem.cost_vector @ problem.initial_vector)
        return _result_from_schedule(problem, Schedule(()), j0, config, "discretized", x, 1, True, 0, {"initial_cost": j0})
    disc = _discretization(problem, N)
    diagnostics: dict = {}
    if config.gradient_check:
        rng = np.random.default_rng(config.seed)
        probe = np.clip(x + 0.05 * rng.standard_normal(N), 0.05, 0.95)
        idx = np.unique(np.linspace(0, N - 1, min(N, 8)).astype(int))
        mism = gradient_mismatch(problem, probe, indices=idx)
        diagnostics["gradient_mismatch"] = mism
        if not mism < config.gradient_tol:
            raise GradientCheckError(f"adjoint gradient mismatch {mism:.3e} exceeds {config.gradient_tol:g}")

    cost, grad = disc.cost_and_gradient(x)
    initial_cost = cost
    history = [cost]
    alpha = 1.0 / max(float(np.max(np.abs(grad))), 1e-12)
    converged = False
    line_failure = False
    it = 0
    for it in range(1, config.max_iter + 1):
        d = np.clip(x - alpha * grad, 0.0, 1.0) - x
        if float(np.max(np.abs(d))) < 1e-15:
            converged = True
            break
        slope = float(grad @ d)
        if slope >= 0:
            converged = True
            break
        t = 1.0
        while True:
            x_new = x + t * d
            c_new = disc.cost(x_new)
            if c_new <= cost + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-14:
                line_failure = True
                break
        if line_failure:
            break
        c_new, g_new = disc.cost_and_gradient(x_new)
        sx, sy = x_new - x, g_new - grad
        curv = float(sx @ sy)
        alpha = float(sx @ sx) / curv if curv > 0 else 1e3 * alpha
        alpha = min(max(alpha, 1e-10), 1e10)
        x, cost, grad = x_new, c_new, g_new
        history.append(cost)
        k = config.stall_iters
        if len(history) > k and abs(history[-k - 1] - history[-1]) <= config.rtol * (1.0 + abs(cost)):
            converged = True
            break
    diagnostics.update({"initial_cost": initial_cost, "line_search_failure": line_failure})
    schedule = schedule_from_samples(x, problem.t_f)
    return _result_from_schedule(problem, schedule, cost, config, "discretized", x, 1, converged and not line_failure,
                                 it, diagnostics)


# ---------------------------------------------------------------------------
# critical time and small-time expansion


def estimate_critical_time(problem: ControlProblem, t_grid: Sequence[float], n_arcs: int = 4,
                           config: OptimizeConfig | None = None, tol: float = 1e-6) -> dict:
    """Scan the minimal cost over final times.

    Each grid point is optimized over ``n_arcs`` bang arcs; the best schedule
    of the previous point, stretched to the new duration, is an extra start.
    ``t_c_estimate`` is the first grid time whose cost is within ``tol`` of
    the smallest cost on the grid.
    """
    config = config or OptimizeConfig()
    t_grid = np.asarray(t_grid, dtype=float)
    if len(t_grid) == 0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be nonempty and strictly increasing")
    results = []
    prev = None
    for t in t_grid:
        extra = ()
        if prev is not None and len(prev.durations) == n_arcs:
            extra = (tuple(np.asarray(prev.durations) * (t / prev.schedule.t_f)),)
        cfg = OptimizeConfig(**{**config.__dict__, "initial_durations": extra + tuple(config.initial_durations)})
        res = optimize_switch_times(problem.with_tf(float(t)), n_arcs, cfg)
        results.append(res)
        prev = res
    curve = np.array([r.cost for r in results])
    j_min = float(np.min(curve))
    idx = int(np.argmax(curve <= j_min + tol))
    increases = np.diff(curve)
    return {
        "t_c_estimate": float(t_grid[idx]),
        "t_grid": t_grid.tolist(),
        "J_curve": curve.tolist(),
        "max_increase": float(np.max(increases)) if len(increases) else 0.0,
        "results": results,
    }


def short_time_cost_coefficient(B, C, t_values: Sequence[float], rho0=None) -> dict:
    """Small-time quadratic coefficient of the cost for ``C``-then-``B`` bangs.

    With ``rho0`` the nondegenerate ground state of ``B`` the cost after
    ``s = 0`` for ``t`` and ``s = 1`` for ``t`` behaves as
    ``Tr(C rho0) + k t^2``.  The coefficient is compared with
    ``k = Tr([B, C][C, rho0]) = -2 sum_j (l_j - l_1) |a_j|^2`` where ``l_j`` are
    the eigenvalues of ``B`` and ``a_j = <j|C|1>``.
    """
    b, c = as_matrix(B), as_matrix(C)
    w, v = np.linalg.eigh(b)
    if len(w) < 2 or w[1] - w[0] < 1e-9:
        raise ValueError("ground state of B is degenerate")
    if np.linalg.norm(commutator(b, c)) < 1e-12:
        raise ValueError("[B, C] = 0")
    g = v[:, 0]
    ground = np.outer(g, g.conj())
    if rho0 is not None and not np.allclose(as_matrix(rho0), ground, atol=1e-10):
        raise ValueError("rho0 must be the ground state of B")
    c_eig = v.conj().T @ c @ v
    a = c_eig[1:, 0]
    gaps = w[1:] - w[0]
    sum_form = float(np.sum(gaps * np.abs(a) ** 2))
    analytic = -2.0 * sum_form
    trace_form = float(np.real(np.trace(commutator(b, c) @ commutator(c, ground))))
    no_dynamics = float(np.linalg.norm(commutator(c, ground))) < 1e-12
    problem = ControlProblem(b, c, ground, 0.0)
    j0 = float(np.real(np.trace(c @ ground)))
    ts = np.asarray(t_values, dtype=float)
    deltas = []
    for t in ts:
        sched = Schedule((Bang(0, t), Bang(1, t)))
        x = problem.initial_vector
        for s, d in sched.segments():
            x = expm(d * problem.generator(s)) @ x
        deltas.append(float(problem.cost_vector @ x) - j0)
    deltas = np.array(deltas)
    per_t = deltas / ts**2
    if len(ts) >= 2:
        # fit k t^2 + k3 t^3 to remove the leading correction
        design = np.stack([ts**2, ts**3], axis=1)
        extrapolated = float(np.linalg.lstsq(design, deltas, rcond=None)[0][0])
    else:
        extrapolated = float(per_t[0])

    def rel(x):
        if analytic == 0:
            return abs(x)
        return abs(x - analytic) / abs(analytic)

    spread = float((per_t.max() - per_t.min()) / max(abs(per_t).max(), 1e-300)) if len(ts) > 1 else 0.0
    return {
        "t_values": ts.tolist(),
        "delta_cost": deltas.tolist(),
        "fitted_per_t": per_t.tolist(),
        "fitted_extrapolated": extrapolated,
        "analytic": analytic,
        "single_sum_form": -sum_form,
        "trace_form": trace_form,
        "relative_error_per_t": [rel(x) for x in per_t],
        "relative_spread": spread,
        "no_dynamics": no_dynamics,
        "ground_gap": float(gaps[0]),
    }
