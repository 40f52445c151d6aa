"""Borgnakke-Larsen collision kinematics.

The array functions (``*_arrays``) operate on batches of pairs and are what
the particle solver calls. The scalar functions wrap them for single pairs
and raise on degenerate input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GasParams, MolecularState, bracket_sq_arrays
from .errors import DegenerateCollision, DomainError, SingularJacobian



@dataclass(frozen=True)
class CollisionParams:
    """A point (r, R, sigma) of the compact manifold [0,1]^2 x S^2.

    ``degenerate`` marks an r produced by the 0/0 convention r = 1/2.
    """

    r: float
    R: float
    sigma: tuple
    degenerate: bool = False

    def __post_init__(self):
        s = tuple(float(x) for x in np.asarray(self.sigma, dtype=float).reshape(3))
        object.__setattr__(self, "sigma", s)
        if not (0.0 <= self.r <= 1.0 and 0.0 <= self.R <= 1.0):
            raise DomainError(f"r and R must lie in [0, 1], got r={self.r}, R={self.R}")
        if abs(math.sqrt(sum(x * x for x in s)) - 1.0) > 1e-12:
            raise DomainError("sigma must be a unit vector")


@dataclass(frozen=True)
class CollisionPair:
    a: MolecularState
    b: MolecularState


@dataclass(frozen=True)
class EnergySplit:
    E: float
    V: np.ndarray
    u: np.ndarray
    E_brackets: float
    Theta: float
    Sigma: float
    s: float
    p: float
    q: float
    lam: float

    def weights(self, r: float) -> tuple[float, float]:
        """Convex weights (p, q) for internal split ``r``."""
        return self.s / 2 + r * (1 - self.s), self.s / 2 + (1 - r) * (1 - self.s)


def pair_energy_arrays(v, vs, I, Is, m):
    """Total collision energy E = m|u|^2/4 + I + I_* per pair."""
    u = np.asarray(v) - np.asarray(vs)
    return 0.25 * m * np.einsum("...i,...i->...", u, u) + I + Is


def transform_arrays(v, vs, I, Is, r, R, sigma, m):
    """Apply the collision map T to batches of pairs.

    Returns ``(v', vs', I', Is', r', R', sigma', flags)``. ``flags`` is a
    bitmask per pair: 1 when I + I_* = 0 (r' set to 1/2), 2 when u = 0
    (sigma' set to sigma), 4 when E = 0.
    """
    v = np.asarray(v, dtype=float)
    vs = np.asarray(vs, dtype=float)
    I = np.asarray(I, dtype=float)
    Is = np.asarray(Is, dtype=float)
    r = np.asarray(r, dtype=float)
    R = np.asarray(R, dtype=float)
    sigma = np.asarray(sigma, dtype=float)

    V = 0.5 * (v + vs)
    u = v - vs
    u2 = np.einsum("...i,...i->...", u, u)
    kin = 0.25 * m * u2
    Iint = I + Is
    E = kin + Iint

    speed = np.sqrt(np.maximum(R * E / m, 0.0))[..., None]
    v_new = V + speed * sigma
    vs_new = V - speed * sigma
    I_new = r * (1.0 - R) * E
    Is_new = (1.0 - r) * (1.0 - R) * E

    flags = np.zeros(np.shape(E), dtype=np.int8)
    zero_int = Iint <= 0.0
    zero_u = u2 <= 0.0
    zero_E = E <= 0.0
    flags = flags | np.where(zero_int, 1, 0).astype(np.int8)
    flags = flags | np.where(zero_u, 2, 0).astype(np.int8)
    flags = flags | np.where(zero_E, 4, 0).astype(np.int8)

    with np.errstate(invalid="ignore", divide="ignore"):
        r_new = np.where(zero_int, 0.5, I / np.where(zero_int, 1.0, Iint))
        R_new = np.where(zero_E, 0.0, kin / np.where(zero_E, 1.0, E))
        norm_u = np.sqrt(u2)[..., None]
        sigma_new = np.where(zero_u[..., None], sigma, u / np.where(zero_u[..., None], 1.0, norm_u))
    return v_new, vs_new, I_new, Is_new, r_new, R_new, sigma_new, flags


def jacobian_arrays(R, R_new):
    """Closed-form Jacobian (1-R) R^(1/2) / ((1-R') R'^(1/2))."""
    R = np.asarray(R, dtype=float)
    R_new = np.asarray(R_new, dtype=float)
    return (1.0 - R) * np.sqrt(R) / ((1.0 - R_new) * np.sqrt(R_new))


def _pair_arrays(pair: CollisionPair):
    return pair.a.varr, pair.b.varr, pair.a.I, pair.b.I


def transform(pair: CollisionPair, cp: CollisionParams, params: GasParams) -> tuple[CollisionPair, CollisionParams]:
    """Post-collision pair and the parameters that map it back.

    Raises :class:`DegenerateCollision` when E = 0. When I + I_* = 0 the
    returned parameters carry ``degenerate=True`` with r' = 1/2.
    """
    v, vs, I, Is = _pair_arrays(pair)
    if pair_energy_arrays(v, vs, I, Is, params.m) <= 0.0:
        raise DegenerateCollision("pair has zero collision energy")
    out = transform_arrays(v, vs, I, Is, cp.r, cp.R, np.array(cp.sigma), params.m)
    v2, vs2, I2, Is2, r2, R2, s2, flags = out
    new_pair = CollisionPair(MolecularState(v2, I2), MolecularState(vs2, Is2))
    new_cp = CollisionParams(float(np.clip(r2, 0, 1)), float(np.clip(R2, 0, 1)), s2, degenerate=bool(flags & 1))
    return new_pair, new_cp


def jacobian(pair: CollisionPair, cp: CollisionParams, params: GasParams) -> float:
    """Jacobian of T at (pair, cp); raises :class:`SingularJacobian` if R' is 0 or 1."""
    _, cp2 = transform(pair, cp, params)
    if cp2.R <= 0.0 or cp2.R >= 1.0:
        raise SingularJacobian(f"R' = {cp2.R}")
    return float(jacobian_arrays(cp.R, cp2.R))


def phi_alpha(r, alpha):
    r = np.asarray(r, dtype=float)
    return (r * (1.0 - r)) ** alpha


def psi_alpha(R, alpha):
    return (1.0 - np.asarray(R, dtype=float)) ** (2.0 * alpha)


def weight_invariant(pair: CollisionPair, cp: CollisionParams, params: GasParams) -> tuple[float, float]:
    """Both sides of I^a I_*^a phi(r) psi(R) = I'^a I'_*^a phi(r') psi(R')."""
    a = params.alpha
    pair2, cp2 = transform(pair, cp, params)
    energies = (pair.a.I, pair.b.I, pair2.a.I, pair2.b.I)
    if a < 0 and min(energies) <= 0.0:
        raise DomainError("alpha < 0 requires strictly positive internal energies")
    lhs = (pair.a.I * pair.b.I) ** a * float(phi_alpha(cp.r, a) * psi_alpha(cp.R, a))
    rhs = (pair2.a.I * pair2.b.I) ** a * float(phi_alpha(cp2.r, a) * psi_alpha(cp2.R, a))
    return lhs, rhs


def energy_split_arrays(v, vs, I, Is, R, m, r=0.5):
    """Vectorized energy-identity decomposition; returns a dict of arrays."""
    v = np.asarray(v, dtype=float)
    vs = np.asarray(vs, dtype=float)
    V = 0.5 * (v + vs)
    u = v - vs
    E = pair_energy_arrays(v, vs, I, Is, m)
    Eb = bracket_sq_arrays(v, I, m) + bracket_sq_arrays(vs, Is, m)
    V2 = np.einsum("...i,...i->...", V, V)
    Theta = (1.0 + V2) / Eb
    Sigma = (1.0 + R * E / m) / ((1.0 - Theta) * Eb)
    s = Theta + Sigma * (1.0 - Theta)
    # (Theta Eb - 1)(Sigma (1 - Theta) Eb - 1) reduces to |V|^2 R E / m, which avoids cancellation
    lam = np.sqrt(V2 * np.maximum(R * E / m, 0.0))
    p = s / 2 + r * (1 - s)
    q = s / 2 + (1 - r) * (1 - s)
    return dict(E=E, V=V, u=u, E_brackets=Eb, Theta=Theta, Sigma=Sigma, s=s, p=p, q=q, lam=lam)


def energy_split(pair: CollisionPair, R: float, params: GasParams, r: float = 0.5) -> EnergySplit:
    """Decompose the pair's molecular energies.

    With E<> = <v,I>^2 + <v_*,I_*>^2, the post-collision squared brackets are
    ``E<> p + lam Vhat.sigma`` and ``E<> q - lam Vhat.sigma``, where p and q
    use the internal split ``r``.
    """
    v, vs, I, Is = _pair_arrays(pair)
    d = energy_split_arrays(v, vs, I, Is, R, params.m, r)
    return EnergySplit(
        E=float(d["E"]), V=d["V"], u=d["u"], E_brackets=float(d["E_brackets"]),
        Theta=float(d["Theta"]), Sigma=float(d["Sigma"]), s=float(d["s"]),
        p=float(d["p"]), q=float(d["q"]), lam=float(d["lam"]),
    )
