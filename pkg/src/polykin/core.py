"""Domain types, the Lebesgue bracket and moment/observable reductions.

Particles are stored as a struct of arrays (``v`` of shape (N, 3) and ``I``
of shape (N,)) so that every reduction is a vectorized numpy call. The
:class:`MolecularState` type is the scalar view used by per-pair APIs.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, MomentOverflowWarning


@dataclass(frozen=True)
class GasParams:
    """Molecular mass ``m``, internal-structure exponent ``alpha`` and ``kB``.

    The number of degrees of freedom is ``D = 2*alpha + 5``.
    """

    m: float = 1.0
    alpha: float = 0.0
    kB: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.m) and self.m > 0):
            raise DomainError(f"m must be > 0, got {self.m}")
        if not (np.isfinite(self.alpha) and self.alpha > -1):
            raise DomainError(f"alpha must be > -1, got {self.alpha}")
        if not (np.isfinite(self.kB) and self.kB > 0):
            raise DomainError(f"kB must be > 0, got {self.kB}")

    @property
    def dof(self) -> float:
        return 2.0 * self.alpha + 5.0


@dataclass(frozen=True)
class MolecularState:
    """A single molecule: velocity 3-vector ``v`` and internal energy ``I``."""

    v: tuple
    I: float

    def __post_init__(self):
        v = tuple(float(x) for x in np.asarray(self.v, dtype=float).reshape(3))
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "I", float(self.I))
        if not all(math.isfinite(x) for x in v) or not math.isfinite(self.I):
            raise DomainError("state components must be finite")
        if self.I < 0:
            raise DomainError(f"internal energy must be >= 0, got {self.I}")

    @property
    def varr(self) -> np.ndarray:
        return np.array(self.v)


@dataclass
class Ensemble:
    """Equal-weight particle representation of f(t, v, I)."""

    v: np.ndarray
    I: np.ndarray
    weight: float
    time: float = 0.0
    collision_tally: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self.v = np.ascontiguousarray(self.v, dtype=float).reshape(-1, 3)
        self.I = np.ascontiguousarray(self.I, dtype=float).reshape(-1)
        if self.v.shape[0] != self.I.shape[0]:
            raise DomainError("v and I must describe the same number of particles")
        if self.v.shape[0] == 0:
            raise DomainError("ensemble must be non-empty")
        if not (np.isfinite(self.weight) and self.weight > 0):
            raise DomainError(f"weight must be > 0, got {self.weight}")
        if self.time < 0:
            raise DomainError("time must be >= 0")
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.I))):
            raise DomainError("particle data must be finite")
        if np.any(self.I < 0):
            raise DomainError("internal energies must be >= 0")

    @classmethod
    def from_states(cls, states: Iterable[MolecularState], weight: float = 1.0, time: float = 0.0) -> "Ensemble":
        states = list(states)
        return cls(np.array([s.v for s in states]).reshape(-1, 3), np.array([s.I for s in states]), weight, time)

    @property
    def n(self) -> int:
        return self.I.shape[0]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> MolecularState:
        return MolecularState(self.v[i], self.I[i])

    @property
    def particles(self) -> list[MolecularState]:
        return [self[i] for i in range(self.n)]

    def copy(self) -> "Ensemble":
        return Ensemble(self.v.copy(), self.I.copy(), self.weight, self.time, Counter(self.collision_tally))


def _fsum(x: np.ndarray) -> float:
    # Exactly rounded, order-independent summation.
    return math.fsum(np.asarray(x, dtype=float).ravel().tolist())


def bracket_sq_arrays(v: np.ndarray, I: np.ndarray, m: float) -> np.ndarray:
    """Squared bracket 1 + |v|^2/2 + I/m over arrays of states."""
    v = np.asarray(v, dtype=float)
    return 1.0 + 0.5 * np.einsum("...i,...i->...", v, v) + np.asarray(I, dtype=float) / m


def bracket(state: MolecularState, params: GasParams) -> float:
    """Lebesgue bracket sqrt(1 + |v|^2/2 + I/m)."""
    return math.sqrt(float(bracket_sq_arrays(state.varr, state.I, params.m)))


def poly_moment(ens: Ensemble, k: float, params: GasParams) -> float:
    """Polynomial moment ``weight * sum_i <v_i, I_i>^(2k)`` for real k >= 0."""
    if not k >= 0:
        raise DomainError(f"moment order must be >= 0, got {k}")
    b2 = bracket_sq_arrays(ens.v, ens.I, params.m)
    with np.errstate(over="ignore"):
        terms = b2 ** k
    if not np.all(np.isfinite(terms)):
        warnings.warn(f"poly moment of order {k} overflowed", MomentOverflowWarning, stacklevel=2)
        return math.inf
    return ens.weight * _fsum(terms)


def log_poly_moment(ens: Ensemble, k: float, params: GasParams) -> float:
    """Natural log of :func:`poly_moment`, safe for very large orders."""
    if not k >= 0:
        raise DomainError(f"moment order must be >= 0, got {k}")
    b2 = bracket_sq_arrays(ens.v, ens.I, params.m)
    return float(math.log(ens.weight) + logsumexp(k * np.log(b2)))


def exp_moment(ens: Ensemble, s: float, beta: float, params: GasParams) -> float:
    """Exponential moment ``weight * sum_i exp(beta <v_i, I_i>^(2s))``.

    Overflow returns +inf and emits :class:`MomentOverflowWarning`.
    """
    if not (0 < s <= 1):
        raise DomainError(f"s must lie in (0, 1], got {s}")
    if not beta > 0:
        raise DomainError(f"beta must be > 0, got {beta}")
    b2 = bracket_sq_arrays(ens.v, ens.I, params.m)
    with np.errstate(over="ignore"):
        terms = np.exp(beta * b2 ** s)
    if not np.all(np.isfinite(terms)):
        warnings.warn(f"exp moment (s={s}, beta={beta}) overflowed", MomentOverflowWarning, stacklevel=2)
        return math.inf
    return ens.weight * _fsum(terms)


def log_exp_moment(ens: Ensemble, s: float, beta: float, params: GasParams) -> float:
    """Natural log of :func:`exp_moment` without overflow."""
    b2 = bracket_sq_arrays(ens.v, ens.I, params.m)
    return float(math.log(ens.weight) + logsumexp(beta * b2 ** s))


def observables(ens: Ensemble, params: GasParams) -> tuple[float, np.ndarray, float, float]:
    """Return (rho, U, rho*e, T_equiv).

    ``rho*e`` is the peculiar (kinetic about U plus internal) energy density
    and ``T_equiv`` solves ``rho*e = (alpha + 5/2) n kB T`` with n = weight*N.
    """
    n_num = ens.weight * ens.n
    rho = params.m * n_num
    U = np.array([_fsum(ens.v[:, j]) for j in range(3)]) / ens.n
    c = ens.v - U
    e_terms = 0.5 * params.m * np.einsum("ij,ij->i", c, c) + ens.I
    rho_e = ens.weight * _fsum(e_terms)
    T = rho_e / ((params.alpha + 2.5) * n_num * params.kB)
    return rho, U, rho_e, T


def partial_temperatures(ens: Ensemble, params: GasParams) -> tuple[float, float]:
    """Translational and internal temperatures (T_tr, T_int).

    Each equals T_equiv at equilibrium; they differ in a two-temperature state.
    """
    U = ens.v.mean(axis=0)
    c = ens.v - U
    t_tr = params.m * _fsum(np.einsum("ij,ij->i", c, c)) / (3.0 * ens.n * params.kB)
    t_int = _fsum(ens.I) / ((params.alpha + 1.0) * ens.n * params.kB)
    return t_tr, t_int


def total_momentum(ens: Ensemble, params: GasParams) -> np.ndarray:
    return ens.weight * params.m * np.array([_fsum(ens.v[:, j]) for j in range(3)])


def total_energy(ens: Ensemble, params: GasParams) -> float:
    e = 0.5 * params.m * np.einsum("ij,ij->i", ens.v, ens.v) + ens.I
    return ens.weight * _fsum(e)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def _fmt_num(x: float) -> str:
    return repr(float(x))


@dataclass
class MomentReport:
    """Snapshot of macroscopic quantities and moments at one time."""

    time: float
    mass_density: float
    momentum: Sequence[float]
    total_energy: float
    poly_moments: Mapping[float, float] = field(default_factory=dict)
    exp_moments: Mapping[tuple, float] = field(default_factory=dict)
    entropy_estimate: float | None = None
    extra: dict = field(default_factory=dict)

    def check_monotone(self, rtol: float = 1e-12) -> bool:
        """Moments increase with order whenever every bracket is >= 1."""
        ks = sorted(self.poly_moments)
        vals = [self.poly_moments[k] for k in ks]
        return all(b >= a * (1 - rtol) for a, b in zip(vals, vals[1:]))

    def to_dict(self) -> dict:
        d = {
            "t": self.time,
            "rho": self.mass_density,
            "momentum": [float(x) for x in self.momentum],
            "E_tot": self.total_energy,
            "poly_moments": {_fmt_num(k): v for k, v in self.poly_moments.items()},
            "exp_moments": {f"{_fmt_num(s)},{_fmt_num(b)}": v for (s, b), v in self.exp_moments.items()},
            "entropy": self.entropy_estimate,
        }
        if self.extra:
            d["extra"] = self.extra
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MomentReport":
        exp_m = {}
        for key, val in d.get("exp_moments", {}).items():
            s, b = key.split(",")
            exp_m[(float(s), float(b))] = val
        return cls(
            time=d["t"],
            mass_density=d["rho"],
            momentum=list(d["momentum"]),
            total_energy=d["E_tot"],
            poly_moments={float(k): v for k, v in d.get("poly_moments", {}).items()},
            exp_moments=exp_m,
            entropy_estimate=d.get("entropy"),
            extra=d.get("extra", {}),
        )

    @staticmethod
    def csv_header(orders: Sequence[float]) -> list[str]:
        return ["t", "rho", "Ux", "Uy", "Uz", "E_tot"] + [f"m_{_fmt_k(k)}" for k in orders] + ["entropy"]

    def csv_row(self, orders: Sequence[float]) -> list:
        U = [p / self.mass_density for p in self.momentum]
        ent = "" if self.entropy_estimate is None else self.entropy_estimate
        return [self.time, self.mass_density, *U, self.total_energy] + [self.poly_moments.get(k, "") for k in orders] + [ent]


def _fmt_k(k: float) -> str:
    k = float(k)
    return str(int(k)) if k.is_integer() else repr(k)


def moment_report(ens: Ensemble, params: GasParams, orders: Sequence[float] = (), exp_specs: Sequence[tuple] = (), entropy: float | None = None) -> MomentReport:
    """Build a :class:`MomentReport` for the current ensemble."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MomentOverflowWarning)
        pm = {float(k): poly_moment(ens, k, params) for k in orders}
        em = {(float(s), float(b)): exp_moment(ens, s, b, params) for s, b in exp_specs}
    return MomentReport(
        time=ens.time,
        mass_density=params.m * ens.weight * ens.n,
        momentum=total_momentum(ens, params).tolist(),
        total_energy=total_energy(ens, params),
        poly_moments=pm,
        exp_moments=em,
        entropy_estimate=entropy,
    )
