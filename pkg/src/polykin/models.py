"""Transition functions, extended-Grad bound factors and partition constants."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .collision import CollisionPair, CollisionParams
from .core import GasParams
from .errors import DegenerateCollision, DomainError, QuadratureFailure, UnsupportedAngular

MODELS = ("Model1", "Model2", "Model3")
FOUR_PI = 4.0 * math.pi


class AngularFn:
    """Angular factor b(cos theta) on the sphere, with its norms and a sampler."""

    kind = "abstract"

    def __call__(self, mu):
        raise NotImplementedError

    @property
    def l1_norm(self) -> float:
        raise NotImplementedError

    @property
    def linf_norm(self) -> float:
        raise NotImplementedError

    def lp_norm(self, p: float) -> float:
        raise UnsupportedAngular(f"{self.kind} has no L^{p} norm")

    def sample(self, uhat: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Unit vectors with density b(uhat . sigma) / ||b||_1, one per row of ``uhat``."""
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


def uniform_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


def orthonormal_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``n`` (rows) to an orthonormal basis."""
    n = np.atleast_2d(n)
    helper = np.where(np.abs(n[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    return e1, e2


@dataclass(frozen=True)
class Isotropic(AngularFn):
    """b = 1 / (4 pi), so that ||b||_1 = 1."""

    kind = "Isotropic"

    def __call__(self, mu):
        return np.full(np.shape(mu), 1.0 / FOUR_PI)

    @property
    def l1_norm(self) -> float:
        return 1.0

    @property
    def linf_norm(self) -> float:
        return 1.0 / FOUR_PI

    def lp_norm(self, p: float) -> float:
        if math.isinf(p):
            return self.linf_norm
        return (FOUR_PI * FOUR_PI ** (-p)) ** (1.0 / p)

    def sample(self, uhat, rng):
        return uniform_sphere(np.atleast_2d(uhat).shape[0], rng)

    def to_config(self) -> dict:
        return {"kind": "Isotropic"}


class TablePdf(AngularFn):
    """Piecewise-linear b over a grid of cos theta values in [-1, 1]."""

    kind = "TablePdf"

    def __init__(self, mu, values):
        mu = np.asarray(mu, dtype=float)
        values = np.asarray(values, dtype=float)
        if mu.ndim != 1 or mu.shape != values.shape or mu.size < 2:
            raise DomainError("TablePdf needs matching 1-D grids with >= 2 points")
        if not (np.isclose(mu[0], -1.0) and np.isclose(mu[-1], 1.0) and np.all(np.diff(mu) > 0)):
            raise DomainError("TablePdf grid must increase from -1 to 1")
        if np.any(values < 0) or not np.all(np.isfinite(values)) or not np.any(values > 0):
            raise DomainError("TablePdf values must be finite, nonnegative and not all zero")
        self.mu = mu
        self.values = values
        seg = 0.5 * (values[1:] + values[:-1]) * np.diff(mu)
        self._seg_mass = seg
        self._cum = np.concatenate([[0.0], np.cumsum(seg)])

    def __call__(self, mu):
        return np.interp(mu, self.mu, self.values)

    @property
    def l1_norm(self) -> float:
        return 2.0 * math.pi * float(self._cum[-1])

    @property
    def linf_norm(self) -> float:
        return float(self.values.max())

    def lp_norm(self, p: float) -> float:
        if math.isinf(p):
            return self.linf_norm
        total = 0.0
        for a, b, fa, fb in zip(self.mu[:-1], self.mu[1:], self.values[:-1], self.values[1:]):
            total += integrate.quad(lambda x: (fa + (fb - fa) * (x - a) / (b - a)) ** p, a, b)[0]
        return (2.0 * math.pi * total) ** (1.0 / p)

    def sample_mu(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # Exact inversion: pick a segment by mass, then solve the quadratic CDF.
        seg = np.searchsorted(self._cum, rng.uniform(0, self._cum[-1], n), side="right") - 1
        seg = np.clip(seg, 0, len(self._seg_mass) - 1)
        a = self.mu[seg]
        h = self.mu[seg + 1] - a
        fa = self.values[seg]
        fb = self.values[seg + 1]
        target = rng.uniform(0, 1, n) * self._seg_mass[seg]
        slope = (fb - fa) / h
        with np.errstate(invalid="ignore", divide="ignore"):
            disc = np.sqrt(np.maximum(fa * fa + 2.0 * slope * target, 0.0))
            x_quad = (disc - fa) / slope
            x_lin = target / fa
        x = np.where(np.abs(slope) * h > 1e-12 * np.maximum(fa + fb, 1e-300), x_quad, x_lin)
        return np.clip(a + x, -1.0, 1.0)

    def sample(self, uhat, rng):
        uhat = np.atleast_2d(uhat)
        n = uhat.shape[0]
        mu = self.sample_mu(n, rng)
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
        e1, e2 = orthonormal_frame(uhat)
        st = np.sqrt(np.maximum(1.0 - mu * mu, 0.0))
        return mu[:, None] * uhat + st[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)

    def to_config(self) -> dict:
        return {"kind": "TablePdf", "mu": self.mu.tolist(), "values": self.values.tolist()}


def angular_from_config(cfg) -> AngularFn:
    if cfg is None or cfg == "Isotropic" or (isinstance(cfg, dict) and cfg.get("kind") == "Isotropic"):
        return Isotropic()
    if isinstance(cfg, dict) and cfg.get("kind") == "TablePdf":
        return TablePdf(cfg["mu"], cfg["values"])
    raise DomainError(f"unknown angular function {cfg!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Transition model choice with its exponent gamma and gas parameters.

    ``variant`` selects the min/max bound factors (default) or the looser
    product-form alternates for Models 2 and 3.
    """

    model: str = "Model1"
    gamma: float = 2.0
    params: GasParams = field(default_factory=GasParams)
    angular: AngularFn = field(default_factory=Isotropic)
    variant: str = "minmax"

    def __post_init__(self):
        if self.model not in MODELS:
            raise DomainError(f"model must be one of {MODELS}, got {self.model!r}")
        if not (0.0 < self.gamma <= 2.0):
            raise DomainError(f"gamma must lie in (0, 2], got {self.gamma}")
        if self.variant not in ("minmax", "product"):
            raise DomainError(f"variant must be 'minmax' or 'product', got {self.variant!r}")


def b_tilde_arrays(u2, Iint, gamma, m):
    """|u|^gamma + ((I + I_*)/m)^(gamma/2) from |u|^2 and I + I_*."""
    g2 = 0.5 * gamma
    return np.asarray(u2, dtype=float) ** g2 + (np.asarray(Iint, dtype=float) / m) ** g2


def b_tilde(pair: CollisionPair, spec: ModelSpec) -> float:
    u = pair.a.varr - pair.b.varr
    return float(b_tilde_arrays(u @ u, pair.a.I + pair.b.I, spec.gamma, spec.params.m))


def kernel_no_angle_arrays(spec: ModelSpec, u2, I, Is, r, R):
    """B / b: the transition function without its angular factor."""
    m = spec.params.m
    g2 = 0.5 * spec.gamma
    u2 = np.asarray(u2, dtype=float)
    I = np.asarray(I, dtype=float)
    Is = np.asarray(Is, dtype=float)
    R = np.asarray(R, dtype=float)
    if spec.model == "Model1":
        return (0.25 * m * u2 + I + Is) ** g2
    if spec.model == "Model2":
        return R ** g2 * u2 ** g2 + (1.0 - R) ** g2 * ((I + Is) / m) ** g2
    r = np.asarray(r, dtype=float)
    return R ** g2 * u2 ** g2 + (r * (1.0 - R) * I / m) ** g2 + ((1.0 - r) * (1.0 - R) * Is / m) ** g2


def _angular_cos(spec: ModelSpec, u, sigma):
    u = np.asarray(u, dtype=float)
    nu = np.linalg.norm(u, axis=-1)
    if isinstance(spec.angular, Isotropic):
        return np.zeros(np.shape(nu))
    if np.any(nu == 0):
        raise DegenerateCollision("u = 0 leaves the scattering angle undefined")
    return np.einsum("...i,...i->...", u, sigma) / nu


def transition_arrays(spec: ModelSpec, v, vs, I, Is, r, R, sigma):
    """Full transition function B including b(uhat . sigma)."""
    u = np.asarray(v, dtype=float) - np.asarray(vs, dtype=float)
    u2 = np.einsum("...i,...i->...", u, u)
    mu = _angular_cos(spec, u, np.asarray(sigma, dtype=float))
    return spec.angular(mu) * kernel_no_angle_arrays(spec, u2, I, Is, r, R)


def transition(pair: CollisionPair, cp: CollisionParams, spec: ModelSpec) -> float:
    return float(transition_arrays(spec, pair.a.varr, pair.b.varr, pair.a.I, pair.b.I, cp.r, cp.R, np.array(cp.sigma)))


def bound_factors(spec: ModelSpec) -> tuple[Callable, Callable, Callable, Callable]:
    """Return vectorized callables (d_lb(r), d_ub(r), e_lb(R), e_ub(R))."""
    g2 = 0.5 * spec.gamma
    m = spec.params.m

    def one(x):
        return np.ones(np.shape(x))

    if spec.model == "Model1":
        lo = m ** g2 * 2.0 ** (-(g2 + 1.0))
        hi = m ** g2
        return one, one, (lambda R: np.full(np.shape(R), lo)), (lambda R: np.full(np.shape(R), hi))

    def mn(x):
        x = np.asarray(x, dtype=float)
        return np.minimum(x, 1.0 - x)

    def mx(x):
        x = np.asarray(x, dtype=float)
        return np.maximum(x, 1.0 - x)

    def prod(x):
        x = np.asarray(x, dtype=float)
        return x * (1.0 - x)

    if spec.model == "Model2":
        if spec.variant == "product":
            return one, one, (lambda R: prod(R) ** g2), one
        return one, one, (lambda R: mn(R) ** g2), (lambda R: mx(R) ** g2)

    if spec.variant == "product":
        c = 2.0 ** (1.0 - g2)
        return (
            (lambda r: prod(r) ** g2),
            one,
            (lambda R: prod(R) ** g2),
            (lambda R: np.full(np.shape(R), c)),
        )
    c = 2.0 ** (1.0 - g2)
    return (lambda r: mn(r) ** g2), one, (lambda R: mn(R) ** g2), (lambda R: c * mx(R) ** g2)


def sandwich_arrays(spec: ModelSpec, v, vs, I, Is, r, R, sigma):
    """(lower, value, upper) of the extended-Grad sandwich for batches."""
    d_lb, d_ub, e_lb, e_ub = bound_factors(spec)
    u = np.asarray(v, dtype=float) - np.asarray(vs, dtype=float)
    u2 = np.einsum("...i,...i->...", u, u)
    bt = b_tilde_arrays(u2, np.asarray(I) + np.asarray(Is), spec.gamma, spec.params.m)
    bval = spec.angular(_angular_cos(spec, u, np.asarray(sigma, dtype=float)))
    value = bval * kernel_no_angle_arrays(spec, u2, I, Is, r, R)
    lower = d_lb(r) * e_lb(R) * bval * bt
    upper = d_ub(r) * e_ub(R) * bval * bt
    return lower, value, upper


def sandwich_check(pair: CollisionPair, cp: CollisionParams, spec: ModelSpec) -> tuple[float, float, float]:
    lo, val, hi = sandwich_arrays(spec, pair.a.varr, pair.b.varr, pair.a.I, pair.b.I, cp.r, cp.R, np.array(cp.sigma))
    return float(lo), float(val), float(hi)


def upper_envelope_arrays(spec: ModelSpec, b2_a, b2_b):
    """Bracket bound 2^(3 gamma/2 - 1) (<v,I>^gamma + <v_*,I_*>^gamma) on B-tilde."""
    g2 = 0.5 * spec.gamma
    return 2.0 ** (1.5 * spec.gamma - 1.0) * (np.asarray(b2_a) ** g2 + np.asarray(b2_b) ** g2)


@dataclass(frozen=True)
class ModelConstants:
    """Weighted integrals of the bound factors and the resulting kappas."""

    c_lb_r: float
    c_ub_r: float
    C_lb_R: float
    C_ub_R: float
    kappa_lb: float
    kappa_ub: float
    l1_norm: float = 1.0

    def __post_init__(self):
        if not (0 < self.c_lb_r <= self.c_ub_r * (1 + 1e-12)):
            raise DomainError("require 0 < c_lb <= c_ub")
        if not (0 < self.C_lb_R <= self.C_ub_R * (1 + 1e-12)):
            raise DomainError("require 0 < C_lb <= C_ub")

    def to_dict(self) -> dict:
        return {
            "c_lb": self.c_lb_r, "c_ub": self.c_ub_r,
            "C_lb": self.C_lb_R, "C_ub": self.C_ub_R,
            "kappa_lb": self.kappa_lb, "kappa_ub": self.kappa_ub,
        }


def beta_fn(a: float, b: float) -> float:
    return math.exp(gammaln(a) + gammaln(b) - gammaln(a + b))


def model1_closed_form(gamma: float, alpha: float, m: float = 1.0) -> tuple[float, float, float, float]:
    """Closed Gamma-function forms (c_lb, c_ub, C_lb, C_ub) for Model 1."""
    g2 = 0.5 * gamma
    c = math.exp(2.0 * gammaln(alpha + 1.0) - gammaln(2.0 * alpha + 2.0))
    C_ub = m ** g2 * math.sqrt(math.pi) * math.exp(gammaln(2.0 * alpha + 2.0) - gammaln(2.0 * alpha + 3.5)) / 2.0
    return c, c, 2.0 ** (-(g2 + 1.0)) * C_ub, C_ub


_QUAD_TOL = 1e-12


def _quad(f, a, b, wvar):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, weight="alg", wvar=wvar, epsabs=_QUAD_TOL, epsrel=1e-13, limit=500)
        except integrate.IntegrationWarning as exc:
            raise QuadratureFailure(str(exc)) from exc
    if not (np.isfinite(val) and err <= 10 * _QUAD_TOL):
        raise QuadratureFailure(f"quadrature error {err} exceeds tolerance")
    return val


def r_integral(fn: Callable, alpha: float) -> float:
    """Integral of fn(r) (r(1-r))^alpha over [0,1], split at 1/2."""
    left = _quad(lambda r: float(fn(r)) * (1.0 - r) ** alpha, 0.0, 0.5, (alpha, 0.0))
    right = _quad(lambda r: float(fn(r)) * r ** alpha, 0.5, 1.0, (0.0, alpha))
    return left + right


def R_integral(fn: Callable, alpha: float) -> float:
    """Integral of fn(R) (1-R)^(2 alpha + 1) R^(1/2) over [0,1], split at 1/2."""
    e = 2.0 * alpha + 1.0
    left = _quad(lambda R: float(fn(R)) * (1.0 - R) ** e, 0.0, 0.5, (0.5, 0.0))
    right = _quad(lambda R: float(fn(R)) * math.sqrt(R), 0.5, 1.0, (0.0, e))
    return left + right


def partition_constants(spec: ModelSpec, alpha: float | None = None, method: str = "auto") -> ModelConstants:
    """Measure constants c^{lb,ub}, C^{lb,ub} and kappa^{lb,ub}.

    ``method='auto'`` uses the closed form for Model 1 and quadrature
    otherwise; ``'quad'`` forces quadrature for every model.
    """
    alpha = spec.params.alpha if alpha is None else alpha
    if not alpha > -1:
        raise DomainError(f"alpha must be > -1, got {alpha}")
    if method not in ("auto", "closed", "quad"):
        raise DomainError(f"unknown method {method!r}")
    if spec.model == "Model1" and method in ("auto", "closed"):
        c_lb, c_ub, C_lb, C_ub = model1_closed_form(spec.gamma, alpha, spec.params.m)
    else:
        if method == "closed":
            raise DomainError("closed form only exists for Model1")
        d_lb, d_ub, e_lb, e_ub = bound_factors(spec)
        c_lb = r_integral(d_lb, alpha)
        c_ub = r_integral(d_ub, alpha)
        C_lb = R_integral(e_lb, alpha)
        C_ub = R_integral(e_ub, alpha)
    l1 = spec.angular.l1_norm
    return ModelConstants(c_lb, c_ub, C_lb, C_ub, l1 * c_lb * C_lb, l1 * c_ub * C_ub, l1)


def sup_de(spec: ModelSpec, n_grid: int = 2001) -> float:
    """Supremum of d_ub(r) e_ub(R) over [0,1]^2."""
    _, d_ub, _, e_ub = bound_factors(spec)
    x = np.linspace(0.0, 1.0, n_grid)
    return float(np.max(d_ub(x)) * np.max(e_ub(x)))


def proposal_mass(alpha: float) -> float:
    """Total mass of phi_alpha(r) psi_alpha(R) (1-R) R^(1/2) dr dR."""
    return beta_fn(alpha + 1.0, alpha + 1.0) * beta_fn(1.5, 2.0 * alpha + 2.0)
