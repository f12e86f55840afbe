"""Bang-arc length statistics.

On an ``s = 0`` arc the switching operator evolves as
``S(t) = exp(-itC) S0 exp(itC)`` and its driver projection
``x_B(t) = Tr(B S(t))`` is a real trigonometric polynomial whose
frequencies are the Bohr frequencies of ``C``.  The arc ends when ``x_B``
first reaches the level ``lambda``.  This module evaluates that signal,
locates first crossings, and runs ensemble experiments on random Ising
instances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq
from scipy.stats import spearmanr

from .operators import as_matrix, commutator, ground_state, ising_problem

__all__ = [
    "TrigonometricSignal",
    "xb_signal",
    "first_crossing",
    "default_horizon",
    "CrossingExperiment",
    "CrossingTable",
    "shortening_experiment",
    "commensurate_period_check",
    "random_switching_seed",
    "HORIZON_CAP",
]

HORIZON_CAP = 1e4
SAMPLES_PER_PERIOD = 16
CHUNK = 4096
TOUCH_TOL = 1e-9


class TrigonometricSignal:
    """``x_B(t) = sum_kl M_kl exp(-i t (c_k - c_l))`` for fixed ``S0, B, C``."""

    def __init__(self, S0, B, C):
        s0, b, c = as_matrix(S0), as_matrix(B), as_matrix(C)
        self.energies, v = np.linalg.eigh(c)
        vh = v.conj().T
        # M_kl = Tr(B Pi_k S0 Pi_l) in the eigenvector basis
        self.amplitudes = (vh @ s0 @ v) * (vh @ b @ v).T
        self.frequencies = self.energies[:, None] - self.energies[None, :]

    def complex_values(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        e = np.exp(-1j * np.outer(t, self.energies))
        return np.sum((e @ self.amplitudes) * e.conj(), axis=1)

    def __call__(self, t) -> np.ndarray:
        return self.complex_values(t).real

    def derivative(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        e = np.exp(-1j * np.outer(t, self.energies))
        return np.sum((e @ (-1j * self.frequencies * self.amplitudes)) * e.conj(), axis=1).real

    def nonzero_frequencies(self, tol: float = 1e-12) -> np.ndarray:
        w = np.abs(self.frequencies[np.abs(self.amplitudes) > tol])
        return np.unique(w[w > tol])

    def scan_step(self) -> float:
        w = self.nonzero_frequencies()
        if w.size == 0:
            return 2 * math.pi / SAMPLES_PER_PERIOD
        return 2 * math.pi / (SAMPLES_PER_PERIOD * w.max())


def xb_signal(S0, B, C, t_grid, method: str = "spectral", return_imag: bool = False):
    """Driver projection of the switching operator along an ``s = 0`` arc.

    Parameters
    ----------
    S0, B, C : array_like
        Initial switching operator, driver and problem Hamiltonians.
    t_grid : array_like
        Elapsed times since the arc started.
    method : {"spectral", "direct"}
        ``"spectral"`` sums the trigonometric polynomial; ``"direct"``
        conjugates ``S0`` by ``exp(-itC)`` at each time.
    return_imag : bool
        Also return the discarded imaginary part.
    """
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if method == "spectral":
        z = TrigonometricSignal(S0, B, C).complex_values(t)
    elif method == "direct":
        s0, b, c = as_matrix(S0), as_matrix(B), as_matrix(C)
        z = np.empty(t.size, dtype=complex)
        for k, tk in enumerate(t):
            u = expm(-1j * tk * c)
            z[k] = np.trace(b @ u @ s0 @ u.conj().T)
    else:
        raise ValueError(f"unknown method {method!r}")
    return (z.real, z.imag) if return_imag else z.real


def default_horizon(C, cap: float = HORIZON_CAP) -> float:
    """``10 * 2 pi / omega_min`` over the nonzero Bohr gaps of ``C``, capped."""
    w = np.linalg.eigvalsh(as_matrix(C))
    gaps = np.diff(np.sort(w))
    gaps = gaps[gaps > 1e-12 * max(1.0, np.abs(w).max())]
    if gaps.size == 0:
        return cap
    return min(10 * 2 * math.pi / gaps.min(), cap)


def _scan(signal: TrigonometricSignal, horizon: float, step: float):
    """Yield consecutive chunks ``(t, x)`` covering ``[0, horizon]``."""
    n_total = int(math.ceil(horizon / step)) + 1
    for start in range(0, n_total, CHUNK):
        idx = np.arange(max(start - 1, 0), min(start + CHUNK, n_total))
        t = np.minimum(idx * step, horizon)
        yield t, signal(t)


def _first_root(signal, level, t, f, skip_origin):
    """Earliest sign change or tangency of ``f = x - level`` in one chunk."""
    d = signal.derivative(t)
    fun = lambda u: float(signal(u)[0] - level)  # noqa: E731
    for i in range(len(t) - 1):
        a, b = t[i], t[i + 1]
        if skip_origin and a == 0.0:
            if f[i + 1] == 0.0:
                return b
            continue
        if f[i] == 0.0:
            return a
        if f[i] * f[i + 1] < 0:
            return brentq(fun, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        if d[i] * d[i + 1] < 0:
            # extremum inside: a tangential touch counts as a crossing
            dfun = lambda u: float(signal.derivative(u)[0])  # noqa: E731
            tm = brentq(dfun, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
            if abs(fun(tm)) < TOUCH_TOL:
                return tm
    return None


def first_crossing(S0, B, C, level: float, horizon: float | None = None, step: float | None = None):
    """First ``t > 0`` with ``x_B(t) = level``, or ``None`` before ``horizon``.

    Crossings are bracketed by sign changes on a scan grid of
    ``SAMPLES_PER_PERIOD`` points per fastest period and refined by
    bisection; tangential touches are located as extrema of ``x_B``.
    """
    if not math.isfinite(level):
        raise ValueError("level must be finite")
    signal = S0 if isinstance(S0, TrigonometricSignal) else TrigonometricSignal(S0, B, C)
    horizon = default_horizon(C) if horizon is None else float(horizon)
    step = signal.scan_step() if step is None else float(step)
    for t, x in _scan(signal, horizon, step):
        root = _first_root(signal, level, t, x - level, skip_origin=True)
        if root is not None:
            return float(root)
    return None


def random_switching_seed(B, C, rng: np.random.Generator, policy: str = "costate") -> np.ndarray:
    """Initial switching operator for the crossing heuristic.

    ``"costate"`` builds ``i[p0, rho0]`` from a random Hermitian ``p0`` and
    the driver ground state; ``"traceless"`` draws a random traceless
    Hermitian matrix.  Both are normalized to unit Hilbert-Schmidt norm.
    """
    n = as_matrix(B).shape[0]
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = 0.5 * (a + a.conj().T)
    if policy == "costate":
        s0 = 1j * commutator(h, ground_state(B))
    elif policy == "traceless":
        s0 = h - np.trace(h) / n * np.eye(n)
    else:
        raise ValueError(f"unknown S0 policy {policy!r}")
    s0 = 0.5 * (s0 + s0.conj().T)
    return s0 / np.linalg.norm(s0)


@dataclass(frozen=True)
class CrossingExperiment:
    """Configuration of the arc-shortening ensemble.

    Disorder: ``h_i ~ N(0, h_scale**2)`` and all-to-all couplings
    ``J_ij ~ N(0, j_scale**2)``.  ``lambda_fraction`` sets the level
    as that fraction of ``max |x_B|`` over the horizon.
    """

    n_range: tuple = (2, 3, 4, 5)
    instances_per_n: int = 100
    h_scale: float = 1.0
    j_scale: float = 1.0
    S0_policy: str = "costate"
    lambda_fraction: float = 0.2
    seed: int = 0
    swap_roles: bool = False
    horizon_cap: float = HORIZON_CAP

    def __post_init__(self):
        if self.instances_per_n < 1:
            raise ValueError("instances_per_n must be at least 1")
        if not 0 < self.lambda_fraction < 1:
            raise ValueError("lambda_fraction must lie in (0, 1)")
        if self.S0_policy not in ("costate", "traceless"):
            raise ValueError(f"unknown S0 policy {self.S0_policy!r}")


@dataclass
class CrossingTable:
    rows: list = field(default_factory=list)
    rank_correlation: float = math.nan
    rank_pvalue: float = math.nan
    pooled_rank_correlation: float = math.nan
    crossings: dict = field(default_factory=dict)

    COLUMNS = ("n", "median_dt", "q25", "q75", "horizon_hits")

    def as_rows(self) -> list[tuple]:
        return [tuple(r[c] for c in self.COLUMNS) for r in self.rows]


def _instance(n: int, rng: np.random.Generator, exp: CrossingExperiment):
    h = rng.normal(scale=exp.h_scale, size=n)
    couplings = [(i, j, rng.normal(scale=exp.j_scale)) for i in range(n) for j in range(i + 1, n)]
    b, c = ising_problem(n, h, couplings)
    return b.matrix, c.matrix


def _instance_crossing(n: int, seed_seq: np.random.SeedSequence, exp: CrossingExperiment):
    rng = np.random.default_rng(seed_seq)
    b, c = _instance(n, rng, exp)
    s0 = random_switching_seed(b, c, rng, exp.S0_policy)
    if exp.swap_roles:
        b, c = c, b
    signal = TrigonometricSignal(s0, b, c)
    horizon = default_horizon(c, exp.horizon_cap)
    step = signal.scan_step()
    peak = max(float(np.abs(x).max()) for _, x in _scan(signal, horizon, step))
    if peak == 0.0:
        return None
    return first_crossing(signal, b, c, exp.lambda_fraction * peak, horizon=horizon, step=step)


def shortening_experiment(exp: CrossingExperiment) -> CrossingTable:
    """Median first-crossing time per qubit count and its rank trend in ``n``.

    Per-instance generators come from ``SeedSequence(seed).spawn`` so every
    instance is reproducible independently of the others.
    """
    table = CrossingTable()
    root = np.random.SeedSequence(exp.seed)
    children = root.spawn(len(exp.n_range))
    medians = []
    for n, child in zip(exp.n_range, children):
        values = [_instance_crossing(n, s, exp) for s in child.spawn(exp.instances_per_n)]
        hits = [v for v in values if v is not None]
        table.crossings[n] = values
        if hits:
            q25, med, q75 = np.percentile(hits, [25, 50, 75])
        else:
            q25 = med = q75 = math.nan
        medians.append(med)
        table.rows.append(
            {"n": n, "median_dt": float(med), "q25": float(q25), "q75": float(q75),
             "horizon_hits": len(values) - len(hits)}
        )
    finite = [(n, m) for n, m in zip(exp.n_range, medians) if math.isfinite(m)]
    if len(finite) >= 2:
        res = spearmanr([n for n, _ in finite], [m for _, m in finite])
        table.rank_correlation = float(res.statistic)
        table.rank_pvalue = float(res.pvalue)
    pooled = [(n, v) for n, vals in table.crossings.items() for v in vals if v is not None]
    if len({n for n, _ in pooled}) >= 2:
        table.pooled_rank_correlation = float(spearmanr(*zip(*pooled)).statistic)
    return table


def _common_frequency(freqs: np.ndarray, max_denominator: int = 1000, rtol: float = 1e-9):
    """Largest ``w0`` with every frequency an integer multiple of it, else ``None``."""
    base = freqs.min()
    ratios = []
    for w in freqs:
        r = Fraction(float(w / base)).limit_denominator(max_denominator)
        if abs(float(r) - w / base) > rtol * (w / base):
            return None
        ratios.append(r)
    den = math.lcm(*(r.denominator for r in ratios))
    num = math.gcd(*(int(r * den) for r in ratios))
    return base * num / den


def commensurate_period_check(C_ising, B, S0, J: float | None = None, n_samples: int = 2001,
                              tol: float = 1e-8) -> dict:
    """Periodicity of ``x_B`` when the Bohr frequencies of ``C`` are commensurate.

    The tested period is ``2 pi / J`` when the coupling scale ``J`` is
    given, otherwise the fundamental period ``2 pi / w0``.  Incommensurate
    spectra give ``applicable=False``.
    """
    signal = TrigonometricSignal(S0, B, C_ising)
    w = np.abs(signal.frequencies.ravel())
    w = np.unique(w[w > 1e-12 * max(1.0, np.abs(signal.energies).max())])
    if w.size == 0:
        fundamental = 2 * math.pi / J if J is not None else 2 * math.pi
    else:
        w0 = _common_frequency(w)
        if w0 is None:
            return {"applicable": False, "reason": "Bohr frequencies are not integer multiples of a common scale"}
        fundamental = 2 * math.pi / w0
    period = 2 * math.pi / J if J is not None else fundamental
    ratio = period / fundamental
    t = np.linspace(0.0, period, n_samples)
    residual = float(np.abs(signal(t + period) - signal(t)).max())
    return {
        "applicable": True,
        "fundamental_period": fundamental,
        "tested_period": period,
        "period_ratio": ratio,
        "divides": abs(ratio - round(ratio)) < 1e-9,
        "residual": residual,
        "passed": residual < tol,
    }
