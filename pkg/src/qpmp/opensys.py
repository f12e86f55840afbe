"""Open-system generators.

``JointModel``
    System plus a finite environment evolving unitarily under
    ``H_tot(s) = H_S(s) (x) I + sum_a S_a (x) E_a + I (x) H_E``.
``RedfieldModel``
    Adiabatic Redfield generator with damped-exponential correlation
    functions, whose time integrals are evaluated in closed form.
``GAMEModel``
    Completely positive generator with jump operators ``S_a o sqrt(gamma)``
    built in the instantaneous eigenbasis of ``H_S(s)``.

All generators depend on time only through ``s`` and are memoized per
``s``, so repeated calls with the same value return the identical array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from .operators import (
    HermitianOperator,
    Superoperator,
    as_matrix,
    commutator,
    commutator_superop,
    superop_from_sandwiches,
)

__all__ = [
    "DimensionCapError",
    "NegativeSpectralDensityError",
    "JointModel",
    "CorrelationSpec",
    "RedfieldModel",
    "ConstantSpectralDensity",
    "OhmicSpectralDensity",
    "GAMEModel",
    "joint_liouvillian",
    "redfield_generator",
    "redfield_dissipator",
    "redfield_adjoint",
    "game_generator",
    "game_dissipator",
    "game_adjoint",
    "endpoint_arc_checks",
    "DEFAULT_DIMENSION_CAP",
]

DEFAULT_DIMENSION_CAP = 64
DERIVATIVE_STEP = 1e-6


class DimensionCapError(ValueError):
    """Joint Hilbert space larger than the configured cap."""


class NegativeSpectralDensityError(ValueError):
    """Spectral density is negative at a sampled Bohr frequency."""

    def __init__(self, omega: float, value: float):
        super().__init__(f"spectral density is negative at omega={omega:.17g} (gamma={value:.6g})")
        self.omega = omega
        self.value = value


def _herm(x, name: str) -> np.ndarray:
    try:
        return HermitianOperator(x).matrix
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from None


def _check_range(s: float):
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"s must lie in [0, 1], got {s}")


class _GeneratorCache:
    """Per-``s`` memo of generator matrices (read-only arrays)."""

    def __init__(self, build: Callable[[float], np.ndarray]):
        self._build = build
        self._store: dict[float, np.ndarray] = {}

    def __call__(self, s: float) -> np.ndarray:
        s = float(s)
        m = self._store.get(s)
        if m is None:
            m = np.asarray(self._build(s), dtype=float)
            m.setflags(write=False)
            if len(self._store) > 4096:
                self._store.clear()
            self._store[s] = m
        return m


# ---------------------------------------------------------------------------
# joint system + environment


@dataclass(frozen=True, eq=False)
class JointModel:
    B: object
    C: object
    couplings: tuple
    H_E: object
    rho_E: object
    cap: int = DEFAULT_DIMENSION_CAP
    kind: str = field(default="joint", init=False)

    def __post_init__(self):
        b, c = _herm(self.B, "B"), _herm(self.C, "C")
        if b.shape != c.shape:
            raise ValueError("B and C dimensions differ")
        h_e = _herm(self.H_E, "H_E")
        rho_e = _herm(self.rho_E, "rho_E")
        if rho_e.shape != h_e.shape:
            raise ValueError("rho_E and H_E dimensions differ")
        if abs(np.trace(rho_e).real - 1) > 1e-10:
            raise ValueError("rho_E must have unit trace")
        if np.linalg.eigvalsh(rho_e)[0] < -1e-10:
            raise ValueError("rho_E must be positive semidefinite")
        pairs = []
        for k, (s_op, e_op) in enumerate(self.couplings):
            s_m, e_m = _herm(s_op, f"couplings[{k}].S"), _herm(e_op, f"couplings[{k}].E")
            if s_m.shape != b.shape or e_m.shape != h_e.shape:
                raise ValueError(f"couplings[{k}] has inconsistent dimensions")
            pairs.append((s_m, e_m))
        n = b.shape[0] * h_e.shape[0]
        if n > self.cap:
            raise DimensionCapError(f"joint dimension {n} exceeds cap {self.cap}")
        for name, val in (("B", b), ("C", c), ("H_E", h_e), ("rho_E", rho_e)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "couplings", tuple(pairs))

    @property
    def n_S(self) -> int:
        return self.B.shape[0]

    @property
    def n_E(self) -> int:
        return self.H_E.shape[0]

    @property
    def dim(self) -> int:
        return self.n_S * self.n_E

    def embed(self, x) -> np.ndarray:
        return np.kron(as_matrix(x), np.eye(self.n_E))

    def joint_state(self, rho0) -> np.ndarray:
        return np.kron(as_matrix(rho0), self.rho_E)

    @cached_property
    def H_I(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for s_m, e_m in self.couplings:
            out += np.kron(s_m, e_m)
        return out

    def H_tot(self, s: float) -> np.ndarray:
        h_s = self.C + s * (self.B - self.C)
        return np.kron(h_s, np.eye(self.n_E)) + self.H_I + np.kron(np.eye(self.n_S), self.H_E)

    @cached_property
    def _parts(self):
        l0 = commutator_superop(self.H_tot(0.0)).matrix
        l1 = commutator_superop(self.embed(self.B - self.C)).matrix
        return l0, l1

    def generator(self, s: float) -> np.ndarray:
        l0, l1 = self._parts
        return l0 + s * l1

    def generator_derivative(self, s: float) -> np.ndarray:
        return self._parts[1]


def joint_liouvillian(model: JointModel, s: float) -> Superoperator:
    """Coordinatized ``K_{H_tot(s)}`` on the joint space."""
    _check_range(s)
    return Superoperator(model.dim, model.generator(s))


# ---------------------------------------------------------------------------
# Redfield


@dataclass(frozen=True)
class CorrelationSpec:
    """``G(t) = g exp(-t/tau_B) exp(-i omega0 t)``."""

    g: float
    tau_B: float
    omega0: float = 0.0

    def __post_init__(self):
        if not self.tau_B > 0:
            raise ValueError("tau_B must be positive")

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return self.g * np.exp(-t / self.tau_B - 1j * self.omega0 * t)

    def integral(self, omega, t_max: float = math.inf):
        """``int_0^t_max G(r) exp(-i r omega) dr`` in closed form."""
        kappa = 1.0 / self.tau_B + 1j * (np.asarray(omega, dtype=float) + self.omega0)
        if math.isinf(t_max):
            return self.g / kappa
        return self.g * (-np.expm1(-t_max * kappa)) / kappa


def _bohr(h: np.ndarray):
    w, v = np.linalg.eigh(h)
    return w, v, w[:, None] - w[None, :]


def _finite_difference(fn: Callable[[float], np.ndarray], s: float, step: float = DERIVATIVE_STEP) -> np.ndarray:
    return (fn(s + step) - fn(s - step)) / (2 * step)


class _DissipativeModel:
    """Shared plumbing for the Redfield and GAME models."""

    B: np.ndarray
    C: np.ndarray

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    def embed(self, x) -> np.ndarray:
        return as_matrix(x)

    def H_S(self, s: float) -> np.ndarray:
        return self.C + s * (self.B - self.C)

    def _sandwich_dissipator(self, s: float) -> list:
        raise NotImplementedError

    def _sandwich_adjoint(self, s: float) -> list:
        raise NotImplementedError

    def _build_generator(self, s: float) -> np.ndarray:
        return commutator_superop(self.H_S(s)).matrix + superop_from_sandwiches(self._sandwich_dissipator(s), self.dim)

    def generator(self, s: float) -> np.ndarray:
        """Coordinatized ``K_{H_S(s)} + D(s)``; ``s`` slightly outside ``[0, 1]`` is
        accepted so that derivatives at the bounds can be centred."""
        return self._cache(s)

    def generator_derivative(self, s: float) -> np.ndarray:
        """Central difference of the generator in ``s``."""
        return _finite_difference(self._cache, s)

    def dissipator(self, s: float) -> np.ndarray:
        return superop_from_sandwiches(self._sandwich_dissipator(s), self.dim)

    def adjoint_dissipator(self, s: float) -> np.ndarray:
        return superop_from_sandwiches(self._sandwich_adjoint(s), self.dim)

    def apply_adjoint_dissipator(self, s: float, x) -> np.ndarray:
        """``D^dagger X`` evaluated as an operator."""
        x = as_matrix(x)
        return sum(c * a @ x @ b for c, a, b in self._sandwich_adjoint(s))


@dataclass(frozen=True, eq=False)
class RedfieldModel(_DissipativeModel):
    """Adiabatic Redfield model.

    ``kernel`` is either one :class:`CorrelationSpec` used for every
    diagonal pair ``(a, a)`` or a mapping ``{(a, b): CorrelationSpec}``.
    """

    B: object
    C: object
    couplings: tuple
    kernel: object
    t_max: float = math.inf
    kind: str = field(default="redfield", init=False)

    def __post_init__(self):
        b, c = _herm(self.B, "B"), _herm(self.C, "C")
        if b.shape != c.shape:
            raise ValueError("B and C dimensions differ")
        ops = tuple(_herm(x, f"couplings[{k}]") for k, x in enumerate(self.couplings))
        if any(o.shape != b.shape for o in ops):
            raise ValueError("coupling operators must match the system dimension")
        if isinstance(self.kernel, CorrelationSpec):
            kernels = {(a, a): self.kernel for a in range(len(ops))}
        elif isinstance(self.kernel, Mapping):
            kernels = {tuple(k): v for k, v in self.kernel.items()}
        else:
            raise TypeError("kernel must be a CorrelationSpec or a mapping of them")
        for (a, bb) in kernels:
            if not (0 <= a < len(ops) and 0 <= bb < len(ops)):
                raise ValueError(f"kernel index ({a}, {bb}) out of range")
        g0 = np.zeros((len(ops), len(ops)), dtype=complex)
        for (a, bb), spec in kernels.items():
            g0[a, bb] = spec.value(0.0)
        if len(ops) and (not np.allclose(g0, g0.conj().T) or np.linalg.eigvalsh(0.5 * (g0 + g0.conj().T))[0] < -1e-12):
            raise ValueError("kernel matrix at t=0 must be positive semidefinite")
        if not (self.t_max > 0):
            raise ValueError("t_max must be positive")
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "couplings", ops)
        object.__setattr__(self, "kernel", kernels)
        object.__setattr__(self, "_cache", _GeneratorCache(self._build_generator))

    def W(self, s: float) -> dict:
        """``W_ab = int_0^t_max G_ab(r) S_b(-r) dr`` for every kernel pair."""
        w, v, omega = _bohr(self.H_S(s))
        vh = v.conj().T
        out = {}
        for (a, b), spec in self.kernel.items():
            s_eig = vh @ self.couplings[b] @ v
            out[(a, b)] = v @ (s_eig * spec.integral(omega, self.t_max)) @ vh
        return out

    def _sandwich_dissipator(self, s):
        eye = np.eye(self.dim)
        terms = []
        for (a, _), w in self.W(s).items():
            sa = self.couplings[a]
            wd = w.conj().T
            # [W rho, S] + [S, rho W^dagger]
            terms += [(1, w, sa), (-1, sa @ w, eye), (1, sa, wd), (-1, eye, wd @ sa)]
        return terms

    def _sandwich_adjoint(self, s):
        eye = np.eye(self.dim)
        terms = []
        for (a, _), w in self.W(s).items():
            sa = self.couplings[a]
            wd = w.conj().T
            # W^dagger [X, S] + [S, X] W
            terms += [(1, wd, sa), (-1, wd @ sa, eye), (1, sa, w), (-1, eye, sa @ w)]
        return terms


def redfield_dissipator(model: RedfieldModel, s: float) -> Superoperator:
    _check_range(s)
    return Superoperator(model.dim, model.dissipator(s))


def redfield_generator(model: RedfieldModel, s: float) -> Superoperator:
    _check_range(s)
    return Superoperator(model.dim, model.generator(s))


def redfield_adjoint(model: RedfieldModel, s: float) -> Superoperator:
    """Adjoint dissipator assembled from its own closed form, not by transposition."""
    _check_range(s)
    return Superoperator(model.dim, model.adjoint_dissipator(s))


# ---------------------------------------------------------------------------
# GAME


@dataclass(frozen=True)
class ConstantSpectralDensity:
    value: float

    def __call__(self, omega):
        return np.full(np.shape(omega), float(self.value))


@dataclass(frozen=True)
class OhmicSpectralDensity:
    """``2 pi eta w exp(-|w|/w_c) / (1 - exp(-beta w))``, equal to ``2 pi eta / beta`` at 0."""

    eta: float
    omega_c: float
    beta: float

    def __post_init__(self):
        if not (self.eta >= 0 and self.omega_c > 0 and self.beta > 0):
            raise ValueError("ohmic density needs eta >= 0, omega_c > 0, beta > 0")

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        out = np.empty_like(w)
        small = np.abs(w) < 1e-12
        ws = w[~small]
        out[~small] = 2 * np.pi * self.eta * ws * np.exp(-np.abs(ws) / self.omega_c) / (-np.expm1(-self.beta * ws))
        out[small] = 2 * np.pi * self.eta / self.beta
        return out


@dataclass(frozen=True, eq=False)
class GAMEModel(_DissipativeModel):
    B: object
    C: object
    couplings: tuple
    gamma: Callable
    kind: str = field(default="game", init=False)

    def __post_init__(self):
        b, c = _herm(self.B, "B"), _herm(self.C, "C")
        if b.shape != c.shape:
            raise ValueError("B and C dimensions differ")
        ops = tuple(_herm(x, f"couplings[{k}]") for k, x in enumerate(self.couplings))
        if any(o.shape != b.shape for o in ops):
            raise ValueError("coupling operators must match the system dimension")
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "couplings", ops)
        object.__setattr__(self, "_cache", _GeneratorCache(self._build_generator))

    def jump_operators(self, s: float) -> list[np.ndarray]:
        """``L_a = S_a o sqrt(gamma(omega_nm))`` in the eigenbasis of ``H_S(s)``."""
        w, v, omega = _bohr(self.H_S(s))
        gam = np.asarray(self.gamma(omega), dtype=float)
        if np.any(gam < 0):
            k = np.unravel_index(np.argmin(gam), gam.shape)
            raise NegativeSpectralDensityError(float(omega[k]), float(gam[k]))
        root = np.sqrt(gam)
        vh = v.conj().T
        return [v @ ((vh @ sa @ v) * root) @ vh for sa in self.couplings]

    def _sandwich_dissipator(self, s):
        eye = np.eye(self.dim)
        terms = []
        for l in self.jump_operators(s):
            ld = l.conj().T
            ldl = ld @ l
            # [L rho, L^dagger] + [L, rho L^dagger]
            terms += [(2, l, ld), (-1, ldl, eye), (-1, eye, ldl)]
        return terms

    def _sandwich_adjoint(self, s):
        eye = np.eye(self.dim)
        terms = []
        for l in self.jump_operators(s):
            ld = l.conj().T
            ldl = ld @ l
            # L^dagger [X, L] + [L^dagger, X] L
            terms += [(2, ld, l), (-1, ldl, eye), (-1, eye, ldl)]
        return terms


def game_dissipator(model: GAMEModel, s: float) -> Superoperator:
    _check_range(s)
    return Superoperator(model.dim, model.dissipator(s))


def game_generator(model: GAMEModel, s: float) -> Superoperator:
    _check_range(s)
    return Superoperator(model.dim, model.generator(s))


def game_adjoint(model: GAMEModel, s: float) -> Superoperator:
    _check_range(s)
    return Superoperator(model.dim, model.adjoint_dissipator(s))


# ---------------------------------------------------------------------------
# endpoint arc checks

HYPOTHESIS_TOL = 1e-12
LAMBDA_TOL = 1e-8


def _norm(x) -> float:
    return float(np.linalg.norm(x))


def endpoint_arc_checks(model, problem, result, s_values: Sequence[float] = (0.0, 0.5, 1.0)) -> dict:
    """Hypotheses and predicted endpoint behaviour for an optimized open problem.

    Unmet hypotheses give the verdict ``"not applicable"``; otherwise the
    verdict is ``"confirmed"`` or ``"violated"``.
    """
    lam = float(result.lambda_)
    lam_pos = lam > LAMBDA_TOL
    rho0 = problem.rho0.matrix
    report: dict = {"kind": model.kind, "lambda": lam, "lambda_positive": lam_pos, "hypotheses": {}, "verdicts": {}}
    hyp = report["hypotheses"]
    hyp["[B,rho0]"] = _norm(commutator(model.B, rho0))

    if model.kind == "joint":
        c_full = model.embed(model.C)
        hyp["[H_I,C(x)I]"] = _norm(commutator(model.H_I, c_full))
        hyp["[rho_E,H_E]"] = _norm(commutator(model.rho_E, model.H_E))
        hyp["[H_I,rho0(x)rho_E]"] = _norm(commutator(model.H_I, model.joint_state(rho0)))
        cls = result.classification
        final_ok = hyp["[H_I,C(x)I]"] < HYPOTHESIS_TOL and lam_pos
        if not final_ok:
            report["verdicts"]["final_arc"] = "not applicable"
        else:
            t0, t1, lab = cls.last
            report["verdicts"]["final_arc"] = "confirmed" if lab == "bang1" and t1 > t0 else "violated"
        init_ok = (
            hyp["[rho_E,H_E]"] < HYPOTHESIS_TOL
            and hyp["[H_I,rho0(x)rho_E]"] < HYPOTHESIS_TOL
            and hyp["[B,rho0]"] < HYPOTHESIS_TOL
            and lam_pos
        )
        if not init_ok:
            report["verdicts"]["initial_arc"] = "not applicable"
        else:
            t0, t1, lab = cls.first
            report["verdicts"]["initial_arc"] = "confirmed" if lab == "bang0" and t1 > t0 else "violated"
        if cls is not None:
            report["first_arc"] = cls.first
            report["last_arc"] = cls.last
    else:
        comm = max((_norm(commutator(sa, model.C)) for sa in model.couplings), default=0.0)
        hyp["[S_a,C]"] = comm
        adj_c = max(_norm(model.apply_adjoint_dissipator(s, model.C)) for s in s_values)
        report["adjoint_dissipator_on_C"] = adj_c
        s_final = float(result.schedule.value_at(problem.t_f))
        report["s_final"] = s_final
        if model.kind == "redfield":
            if comm < HYPOTHESIS_TOL and lam_pos:
                report["verdicts"]["final_point"] = "confirmed" if abs(s_final - 1.0) <= 1e-3 else "violated"
            else:
                report["verdicts"]["final_point"] = "not applicable"
        else:
            # no endpoint result for this generator; report the cancellation only
            report["verdicts"]["final_point"] = "not applicable"
    return report
