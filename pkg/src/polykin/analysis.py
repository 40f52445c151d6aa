"""Explicit constants: Povzner factors, moment thresholds, coercivity, moment
ODI coefficients, Bernoulli envelopes and exponential-moment rates.

Moment-bound constants grow like exp(k^2) in the order k, so every quantity
that can leave double range is also available in log form (``log_*``).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .core import make_rng
from .errors import DomainError, NoValidK0, NotFound
from .models import FOUR_PI, ModelConstants, ModelSpec, bound_factors, uniform_sphere

LN2 = math.log(2.0)


def povzner_cinf(k):
    """Closed form of the double integral of max{(1+mu)/2, r}^k over [0,1]^2."""
    k = np.asarray(k, dtype=float)
    val = 1.0 / (k + 1.0) + 2.0 * k / ((k + 1.0) * (k + 2.0)) * (1.0 - 0.5 ** (k + 2.0))
    return float(val) if val.ndim == 0 else val


def _conj(p: float) -> float:
    if math.isinf(p):
        return 1.0
    if p <= 1.0:
        raise DomainError(f"L^p route needs p > 1, got {p}")
    return p / (p - 1.0)


def dphi_norm(spec: ModelSpec, alpha: float, p: float = math.inf) -> float:
    """L^p([0,1]) norm of d_ub(r) phi_alpha(r)."""
    _, d_ub, _, _ = bound_factors(spec)
    if math.isinf(p):
        if alpha < 0:
            raise DomainError("d_ub * phi_alpha is unbounded for alpha < 0")
        r = np.linspace(0.0, 1.0, 20001)
        return float(np.max(d_ub(r) * (r * (1.0 - r)) ** alpha))
    if alpha * p <= -1.0:
        raise DomainError(f"d_ub * phi_alpha is not in L^{p} for alpha = {alpha}")
    val = integrate.quad(lambda r: float(d_ub(r)) ** p * (r * (1.0 - r)) ** (alpha * p), 0.0, 1.0, points=[0.5], limit=200)[0]
    return val ** (1.0 / p)


def povzner_prefactor(spec: ModelSpec, consts: ModelConstants, p: float = math.inf) -> float:
    """Factor multiplying C^inf (or its L^p analogue) in C_k."""
    alpha = spec.params.alpha
    if math.isinf(p):
        return 8.0 * math.pi * consts.C_ub_R * spec.angular.linf_norm * dphi_norm(spec, alpha, p)
    pc = _conj(p)
    return 2.0 * consts.C_ub_R * spec.angular.lp_norm(p) * dphi_norm(spec, alpha, p) * FOUR_PI ** (1.0 / pc)


def _ck_from_pref(k, pref: float, p: float):
    pc = _conj(p)
    k = np.asarray(k, dtype=float)
    return pref * np.asarray(povzner_cinf(k * pc)) ** (1.0 / pc)


def povzner_ck(k, spec: ModelSpec, consts: ModelConstants, p: float = math.inf):
    """Contracting constant C_k via the L^inf route (default) or the L^p route."""
    val = _ck_from_pref(k, povzner_prefactor(spec, consts, p), p)
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class PovznerTable:
    values: Mapping[float, float]
    variant: str = "ClosedFormLp(inf)"

    def is_decreasing(self) -> bool:
        ks = sorted(self.values)
        return all(self.values[a] > self.values[b] for a, b in zip(ks, ks[1:]))


def povzner_table(ks, spec: ModelSpec, consts: ModelConstants, p: float = math.inf) -> PovznerTable:
    vals = povzner_ck(np.asarray(ks, dtype=float), spec, consts, p)
    return PovznerTable({float(k): float(c) for k, c in zip(ks, np.atleast_1d(vals))}, f"ClosedFormLp({p})")


def _mc_chunk(spec, k, n, seed, stream, orientation):
    rng = make_rng(seed, stream)
    alpha = spec.params.alpha
    _, d_ub, _, _ = bound_factors(spec)
    sig = uniform_sphere(n, rng)
    r = rng.uniform(0.0, 1.0, n)
    vhat = np.array([0.0, 0.0, 1.0])
    uhat = np.array([math.sin(orientation), 0.0, math.cos(orientation)])
    mu_v = np.abs(sig @ vhat)
    bval = spec.angular(sig @ uhat)
    vals = np.maximum(0.5 * (1.0 + mu_v), r) ** k * bval * d_ub(r) * (r * (1.0 - r)) ** alpha
    return vals.sum(), (vals ** 2).sum()


def povzner_ck_mc(k: float, spec: ModelSpec, consts: ModelConstants, n_samples: int = 10 ** 6, seed: int = 0,
                  workers: int = 1, orientations=(0.0,)) -> tuple[float, float]:
    """Monte Carlo estimate of 2 C^ub sup int int max{(1+|Vhat.s|)/2, r}^k b d_ub phi dr ds.

    Returns (estimate, standard error). Each worker draws from its own
    counter-based stream, so the result depends only on (seed, workers).
    """
    best = (-math.inf, 0.0)
    chunks = [n_samples // workers + (1 if i < n_samples % workers else 0) for i in range(workers)]
    for j, th in enumerate(orientations):
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda a: _mc_chunk(spec, k, a[1], seed, 1000 * j + a[0], th), enumerate(chunks)))
        s1 = sum(p[0] for p in parts)
        s2 = sum(p[1] for p in parts)
        mean = s1 / n_samples
        var = max(s2 / n_samples - mean * mean, 0.0)
        est = FOUR_PI * mean
        se = FOUR_PI * math.sqrt(var / n_samples)
        if est > best[0]:
            best = (est, se)
    scale = 2.0 * consts.C_ub_R
    return scale * best[0], scale * best[1]


def threshold_cstar(spec: ModelSpec, consts: ModelConstants) -> float:
    """Threshold C* such that C^inf_k < C* implies C_k < kappa_lb.

    Uses the unit bound on ||d_ub phi_alpha||_inf valid for alpha >= 0; for
    isotropic b this is (1/2) c_lb C_lb / C_ub.
    """
    if spec.params.alpha < 0:
        raise DomainError("the L^inf threshold route needs alpha >= 0")
    return consts.kappa_lb / (8.0 * math.pi * spec.angular.linf_norm * consts.C_ub_R)


def find_kbar_star(spec: ModelSpec, consts: ModelConstants, k_max: int = 10 ** 6) -> int:
    """Smallest integer k > 1 with C^inf_k < C*."""
    cstar = threshold_cstar(spec, consts)
    return kbar_for_threshold(cstar, k_max)


def kbar_for_threshold(cstar: float, k_max: int = 10 ** 6) -> int:
    # Coarse doubling scan, then integer bisection (C^inf is decreasing).
    lo, hi = 1, 2
    while povzner_cinf(hi) >= cstar:
        lo, hi = hi, 2 * hi
        if lo > k_max:
            raise NotFound(f"no k <= {k_max} with C^inf_k < {cstar}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if povzner_cinf(mid) < cstar:
            hi = mid
        else:
            lo = mid
    if hi > k_max:
        raise NotFound(f"no k <= {k_max} with C^inf_k < {cstar}")
    return hi


def k_star(kbar: float, gamma: float, delta: float) -> float:
    return max(float(kbar), 1.0 + gamma, 1.0 + 0.5 * delta)


@dataclass
class CoercivityData:
    """Mass/energy bounds and the Delta moment entering the coercivity constant."""

    M_l: float
    M_u: float
    E_l: float
    E_u: float
    Delta: float
    delta: float = 1.0
    rho_star: float | None = None
    S_of_rho: float | None = None
    c_lb: float | None = None


def coercivity_data_from_ensemble(ens, params, delta: float = 1.0) -> CoercivityData:
    """Exact mass, energy and Delta semi-moment of an ensemble."""
    v2 = np.einsum("ij,ij->i", ens.v, ens.v)
    x = 0.5 * v2 + ens.I / params.m
    mass = ens.weight * ens.n
    energy = ens.weight * math.fsum(x.tolist())
    Delta = ens.weight * math.fsum((x ** (0.5 * (2.0 + delta))).tolist())
    return CoercivityData(mass, mass, energy, energy, Delta, delta)


def coercivity_clb(data: CoercivityData, gamma: float) -> float:
    """Coercivity constant c_lb; fills rho_star and S_of_rho on ``data``."""
    if not (0.0 <= gamma <= 2.0):
        raise DomainError(f"gamma must lie in [0, 2], got {gamma}")
    if data.M_l <= 0 or data.E_l <= 0:
        raise DomainError("coercivity needs M_l > 0 and E_l > 0")
    if data.delta <= 0:
        raise DomainError("delta must be > 0")
    if gamma == 0.0:
        data.c_lb = 2.0
        return 2.0
    rho_star = (2.0 * (data.M_u + data.E_u) / (data.M_l * (2.0 ** (gamma - 2.0) - 0.125))) ** (1.0 / gamma)
    d = data.delta
    S = (2.0 ** (4.0 + d) * max(data.M_u, data.Delta) / data.E_l * (1.0 + rho_star ** 2) ** ((2.0 + d) / 2.0)) ** (1.0 / d)
    S *= 1.0 + 1e-9
    c_lb = min(data.M_l, data.E_l) / 8.0 * S ** (gamma - 2.0) * (1.0 + rho_star ** 2) ** (-gamma / 2.0)
    data.rho_star, data.S_of_rho, data.c_lb = rho_star, S, c_lb
    return c_lb


def bernoulli_envelope(a: float, b: float, c: float, y0: float, t: float) -> float:
    """Solution of y' = -a y^(1+c) + b y with y(0) = y0 (y0 = inf allowed for t > 0)."""
    if min(a, b, c) <= 0 or y0 <= 0:
        raise DomainError("bernoulli_envelope needs a, b, c, y0 > 0")
    decay = math.exp(-c * b * t)
    inv = 0.0 if math.isinf(y0) else y0 ** (-c)
    return (a / b * (1.0 - decay) + inv * decay) ** (-1.0 / c)


@dataclass
class MomentBoundCoeffs:
    """Coefficients of the polynomial-moment differential inequality.

    For k > k*, m_k' <= -A m_k^(1 + gamma/(2k)) + B_k m_k.
    """

    gamma: float
    k_star: float
    kbar_star: int
    kappa_lb: float
    c_lb: float
    C_kstar: float
    m0: float
    m1: float
    A_kstar: float
    eps: float
    C_prefactor: float
    p: float = math.inf
    B_k: dict = field(default_factory=dict)
    eta_k: dict = field(default_factory=dict)
    theta_k: dict = field(default_factory=dict)
    bernoulli: dict = field(default_factory=dict)

    def C(self, k):
        return _ck_from_pref(k, self.C_prefactor, self.p)

    def theta(self, k):
        k = np.asarray(k, dtype=float)
        g2 = 0.5 * self.gamma
        return g2 / (k - 1.0 + g2) + (k - 1.0) / (k + g2)

    def one_minus_theta(self, k):
        k = np.asarray(k, dtype=float)
        g2 = 0.5 * self.gamma
        return (k - 1.0) / ((k - 1.0 + g2) * (k + g2))

    def log_eta(self, k):
        k = np.asarray(k, dtype=float)
        g2 = 0.5 * self.gamma
        return (1.0 + g2) / (k + g2) * math.log(self.m0) + (k - 1.0) / (k - 1.0 + g2) * math.log(self.m1)

    def log_B(self, k):
        """log B_k, vectorized over real k > 1."""
        k = np.asarray(k, dtype=float)
        th = self.theta(k)
        omt = self.one_minus_theta(k)
        lg2 = 0.5 * (3.0 * self.gamma + k) * LN2
        inner = th / omt * (math.log(self.kappa_lb) + lg2 - math.log(self.A_kstar)) + self.log_eta(k) / omt - math.log(self.m1)
        return np.log(self.C(k)) + lg2 + np.maximum(inner, 0.0) + math.log(self.m1)

    def B(self, k) -> float:
        return float(np.exp(self.log_B(k)))

    def log_propagation(self, k, log_mk0):
        k = np.asarray(k, dtype=float)
        return np.maximum(2.0 * k / self.gamma * (self.log_B(k) - math.log(self.A_kstar)), log_mk0)

    def log_generation_const(self, k):
        """log of the generation constant frak-B_k."""
        k = np.asarray(k, dtype=float)
        logB = self.log_B(k)
        e = 2.0 * k / self.gamma
        log_x = np.log(self.gamma / (2.0 * k)) + logB
        with np.errstate(over="ignore", divide="ignore"):
            first = -e * log_x + 0.5 * np.exp(logB)
            second = -e * np.log(-np.expm1(-np.exp(log_x)))
        return e * (logB - math.log(self.A_kstar)) + np.maximum(first, second)

    def entry(self, k: float) -> None:
        """Record B_k, eta_k, theta_k and the Bernoulli triple for order k."""
        self.B_k[k] = self.B(k)
        self.eta_k[k] = float(np.exp(self.log_eta(k)))
        self.theta_k[k] = float(self.theta(k))
        self.bernoulli[k] = (self.A_kstar, self.B_k[k], self.gamma / (2.0 * k))


def moment_bound_coeffs(spec: ModelSpec, consts: ModelConstants, data: CoercivityData, m0: float, m1: float,
                        ks=(), p: float = math.inf) -> MomentBoundCoeffs:
    """Assemble A_{k*}, B_k and the Bernoulli triples for the orders in ``ks``."""
    gamma = spec.gamma
    kbar = find_kbar_star(spec, consts)
    ks_ = k_star(kbar, gamma, data.delta)
    c_lb = data.c_lb if data.c_lb is not None else coercivity_clb(data, gamma)
    pref = povzner_prefactor(spec, consts, p)
    C_ks = float(_ck_from_pref(ks_, pref, p))
    if C_ks >= consts.kappa_lb:
        raise DomainError(f"C_k* = {C_ks} does not fall below kappa_lb = {consts.kappa_lb}")
    A = 0.5 * c_lb * (consts.kappa_lb - C_ks) * m0 ** (-(0.5 * gamma) / ks_)
    eps = 0.5 * c_lb * (1.0 - C_ks / consts.kappa_lb)
    coeffs = MomentBoundCoeffs(gamma, ks_, kbar, consts.kappa_lb, c_lb, C_ks, m0, m1, A, eps, pref, p)
    for k in ks:
        if k < ks_:
            raise DomainError(f"order {k} is below k* = {ks_}")
        coeffs.entry(float(k))
    return coeffs


def moment_coeffs(spec: ModelSpec, consts: ModelConstants, m0: float, m1: float, k: float,
                  data: CoercivityData, p: float = math.inf) -> dict:
    """A_{k*}, B_k, eta_k, theta_k and (a, b, c) for a single order k >= k*."""
    c = moment_bound_coeffs(spec, consts, data, m0, m1, (k,), p)
    return {
        "k_star": c.k_star, "A_kstar": c.A_kstar, "B_k": c.B_k[k], "eta_k": c.eta_k[k],
        "theta_k": c.theta_k[k], "bernoulli": c.bernoulli[k], "eps": c.eps,
    }


def log_propagation_bound(coeffs: MomentBoundCoeffs, k: float, log_mk0: float) -> float:
    return float(coeffs.log_propagation(k, log_mk0))


def propagation_bound(coeffs: MomentBoundCoeffs, k: float, mk0: float) -> float:
    """max{(B_k/A)^(2k/gamma), m_k(0)}; may be +inf in double precision."""
    with np.errstate(over="ignore"):
        return float(np.exp(log_propagation_bound(coeffs, k, math.log(mk0))))


def log_generation_bound(coeffs: MomentBoundCoeffs, k: float, t: float) -> float:
    if t <= 0:
        raise DomainError("generation bound needs t > 0")
    return float(coeffs.log_generation_const(k)) + max(0.0, -2.0 * k / coeffs.gamma * math.log(t))


def generation_bound(coeffs: MomentBoundCoeffs, k: float, t: float) -> float:
    with np.errstate(over="ignore"):
        return float(np.exp(log_generation_bound(coeffs, k, t)))


@dataclass(frozen=True)
class ExpRate:
    """Rate beta (with its log, since it can underflow) and the order k0 used."""

    beta: float
    log_beta: float
    k0: int
    log_candidates: Mapping[str, float]


def _smallest_k0(pred, k_lo: int, k_max: int) -> int:
    """Smallest integer k >= k_lo with pred(k), pred monotone False->True."""
    if pred(k_lo):
        return k_lo
    hi = k_lo
    step = 1
    while not pred(hi):
        lo = hi
        hi = k_lo + step
        step *= 2
        if hi > k_max:
            if pred(k_max):
                hi = k_max
                break
            raise NoValidK0(f"no k0 <= {k_max} satisfies the smallness condition")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _chunked_max(fn, n: int, chunk: int = 1 << 20) -> float:
    best = -math.inf
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk), dtype=float)
        best = max(best, float(np.max(fn(idx))))
    return best


def exp_rate_propagation(coeffs: MomentBoundCoeffs, s: float, beta0: float, MP: float,
                         k0_max: int = 10 ** 9) -> ExpRate:
    """Rate at which an exponential moment of order 2s propagates with bound 3 MP."""
    if not (0 < s <= 1) or beta0 <= 0 or MP <= 0:
        raise DomainError("need 0 < s <= 1, beta0 > 0, MP > 0")
    g = coeffs.gamma
    a_bar = coeffs.c_lb * (coeffs.kappa_lb - coeffs.C_kstar)
    bbar_pref = 2.0 ** (1.5 * g - 1.0)
    k_lo = int(math.floor(coeffs.k_star / s)) + 1

    def ok(k0):
        return a_bar - 8.0 * bbar_pref * float(coeffs.C(s * k0)) * MP > 0.5 * a_bar

    k0 = _smallest_k0(ok, k_lo, k0_max)
    ks = coeffs.k_star

    def log_bounds(kk):
        # Orders s*k and s*k + 1 for k = 0..k0-1. Orders below k* use the k*
        # bound (moments increase with order). Initial moments are bounded by
        # m_j(0) <= Gamma(j/s + 1) beta0^(-j/s) MP.
        out = []
        for j in (s * kk, s * kk + 1.0):
            jj = np.maximum(j, ks)
            log_m0 = math.log(MP) + gammaln(jj / s + 1.0) - (jj / s) * math.log(beta0)
            log_m = coeffs.log_propagation(jj, log_m0)
            out.append(np.maximum(log_m, coeffs.log_B(jj) + log_m))
        return np.maximum(out[0], out[1])

    log_c = _chunked_max(log_bounds, k0)
    log_beta1 = (2.0 / g) * (math.log(a_bar) + math.log(MP) - math.log(4.0) - log_c - math.log1p(a_bar))
    cands = {"beta0": math.log(beta0), "ln2": math.log(LN2), "beta1": log_beta1}
    log_beta = min(cands.values())
    return ExpRate(math.exp(log_beta), log_beta, k0, cands)


def exp_rate_generation(coeffs: MomentBoundCoeffs, MG: float, k0_max: int = 10 ** 9) -> ExpRate:
    """Rate for generating an exponential moment of order gamma from m_{k*}(0) = MG.

    The smallness condition on k0 uses the conserved ||f||_{L^1_1} = coeffs.m1.
    """
    if MG <= 0:
        raise DomainError("MG must be > 0")
    g = coeffs.gamma
    a_bar = coeffs.c_lb * (coeffs.kappa_lb - coeffs.C_kstar)
    bbar_pref = 2.0 ** (1.5 * g - 1.0)
    k_lo = int(math.floor(2.0 * coeffs.k_star / g)) + 1

    def ok(k0):
        return 0.5 * a_bar > 4.0 * bbar_pref * float(coeffs.C(0.5 * g * k0)) * coeffs.m1

    k0 = _smallest_k0(ok, k_lo, k0_max)
    ks = coeffs.k_star

    def log_bounds(kk):
        jj = np.maximum(0.5 * g * kk, ks)
        lg = coeffs.log_generation_const(jj)
        return np.maximum(lg, coeffs.log_B(jj) + lg)

    log_c = _chunked_max(log_bounds, k0 + 1)
    log_third = math.log(a_bar) - math.log(4.0) - log_c + math.log(MG) - math.log1p(a_bar)
    cands = {"ln2": math.log(LN2), "A/2": math.log(0.5 * a_bar), "third": log_third}
    log_beta = min(cands.values()) + math.log1p(-1e-9)
    return ExpRate(math.exp(log_beta), log_beta, k0, cands)
