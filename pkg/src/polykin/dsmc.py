"""Stochastic particle solver for the space-homogeneous polyatomic equation.

Collisions use a no-time-counter scheme. Each candidate pair is thinned in
two stages: first by its bracket bound against the global majorant, then by
the transition function at proposed manifold parameters (r, R, sigma). The
product of the two acceptance probabilities equals the pair's true rate
divided by the majorant, so accepted collisions occur at rate
``weight * integral_K B dmu`` and carry parameters distributed
proportionally to B on the manifold.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np
from scipy import stats

from .collision import CollisionPair, CollisionParams, transform_arrays
from .core import (
    Ensemble,
    GasParams,
    MolecularState,
    MomentReport,
    bracket_sq_arrays,
    make_rng,
    moment_report,
    observables,
    partial_temperatures,
)
from .errors import (
    DegenerateCollision,
    DomainError,
    HypothesisViolation,
    InsufficientSamples,
    MajorantViolationWarning,
    RejectionStall,
)
from .models import (
    Isotropic,
    ModelConstants,
    ModelSpec,
    b_tilde_arrays,
    bound_factors,
    kernel_no_angle_arrays,
    partition_constants,
    proposal_mass,
    sup_de,
)
from . import analysis

INIT_KINDS = ("Equilibrium", "TwoTemperature", "BimodalBeams", "Custom")


@dataclass(frozen=True)
class InitSpec:
    kind: str = "Equilibrium"
    T: float = 1.0
    T_kin: float = 1.0
    T_int: float = 1.0
    speed: float = 1.0
    file: str | None = None

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise DomainError(f"unknown initial condition {self.kind!r}")
        for name in ("T", "T_kin", "T_int"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")
        if self.speed < 0:
            raise DomainError("speed must be >= 0")
        if self.kind == "Custom" and not self.file:
            raise DomainError("Custom initial condition needs a file")


@dataclass(frozen=True)
class Diagnostics:
    moments: tuple = (1.0, 2.0, 3.0)
    exp_moments: tuple = ()
    entropy: bool = False
    entropy_bins: int = 30
    coercivity_spotcheck: int = 0
    envelope_orders: str | None = None


@dataclass(frozen=True)
class SimConfig:
    """Run configuration. ``time_unit='mft'`` measures t_end and dt_report in
    mean free times (estimated from the initial ensemble)."""

    n_particles: int = 10_000
    t_end: float = 1.0
    dt_report: float = 0.1
    seed: int = 0
    model: ModelSpec = field(default_factory=ModelSpec)
    init: InitSpec = field(default_factory=InitSpec)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    time_unit: str = "time"
    delta: float = 1.0
    max_candidate_fraction: float = 0.1

    def __post_init__(self):
        if self.n_particles < 2:
            raise DomainError("n_particles must be >= 2")
        if not (self.t_end > 0 and self.dt_report > 0):
            raise DomainError("t_end and dt_report must be > 0")
        if self.time_unit not in ("time", "mft"):
            raise DomainError("time_unit must be 'time' or 'mft'")
        if not (0 < self.max_candidate_fraction <= 0.5):
            raise DomainError("max_candidate_fraction must lie in (0, 0.5]")


@dataclass
class MajorantState:
    """Global NTC majorant and thinning statistics."""

    lambda_max: float = 0.0
    max_bracket_g: float = 0.0
    kernel_scale: float = 1.0
    remainder: float = 0.0
    tried: int = 0
    stage1: int = 0
    accepted: int = 0
    violations: int = 0

    def refresh(self, ens: Ensemble, spec: ModelSpec) -> None:
        bg = bracket_sq_arrays(ens.v, ens.I, spec.params.m) ** (0.5 * spec.gamma)
        self.set_max(float(bg.max()), spec)

    def set_max(self, max_bg: float, spec: ModelSpec) -> None:
        self.max_bracket_g = max_bg
        self.lambda_max = self.kernel_scale * envelope_coeff(spec) * 2.0 * max_bg

    def stats(self) -> dict:
        return {
            "candidates": self.tried, "stage1_accepted": self.stage1, "collisions": self.accepted,
            "majorant_violations": self.violations,
            "violation_rate": self.violations / self.tried if self.tried else 0.0,
        }


def envelope_coeff(spec: ModelSpec) -> float:
    """2^(3 gamma/2 - 1), the bracket-bound coefficient on B-tilde."""
    return 2.0 ** (1.5 * spec.gamma - 1.0)


def kernel_scale(spec: ModelSpec) -> float:
    """Z ||b||_1 sup(d_ub e_ub): maps B/b bounds to manifold-integrated rates."""
    return proposal_mass(spec.params.alpha) * spec.angular.l1_norm * sup_de(spec)


def new_majorant(ens: Ensemble, spec: ModelSpec) -> MajorantState:
    maj = MajorantState(kernel_scale=kernel_scale(spec))
    maj.refresh(ens, spec)
    return maj


def _centered(v: np.ndarray) -> np.ndarray:
    return v - v.mean(axis=0)


def sample_equilibrium(n: int, T: float, params: GasParams, seed: int = 0, stream: int = 0,
                       density: float = 1.0, center: bool = True) -> Ensemble:
    """Maxwellian sample: v ~ N(0, kT/m) per component, I ~ Gamma(alpha+1, kT)."""
    return sample_two_temperature(n, T, T, params, seed, stream, density, center)


def sample_two_temperature(n: int, T_kin: float, T_int: float, params: GasParams, seed: int = 0,
                           stream: int = 0, density: float = 1.0, center: bool = True) -> Ensemble:
    if n < 1 or T_kin <= 0 or T_int <= 0:
        raise DomainError("need n >= 1 and positive temperatures")
    rng = make_rng(seed, stream)
    v = rng.normal(0.0, math.sqrt(params.kB * T_kin / params.m), (n, 3))
    I = rng.gamma(params.alpha + 1.0, params.kB * T_int, n)
    if center and n > 1:
        v = _centered(v)
    return Ensemble(v, I, density / n)


def sample_bimodal_beams(n: int, speed: float, T_int: float, params: GasParams, seed: int = 0,
                         stream: int = 0, density: float = 1.0) -> Ensemble:
    """Opposed pairs of particles with |v| = speed in uniformly random directions."""
    rng = make_rng(seed, stream)
    half = (n + 1) // 2
    z = rng.uniform(-1, 1, half)
    ph = rng.uniform(0, 2 * math.pi, half)
    rho = np.sqrt(1 - z * z)
    d = np.stack([rho * np.cos(ph), rho * np.sin(ph), z], axis=1) * speed
    v = np.concatenate([d, -d])[:n]
    I = rng.gamma(params.alpha + 1.0, params.kB * T_int, n)
    return Ensemble(_centered(v) if n > 1 else v, I, density / n)


def load_custom(path: str, density: float = 1.0) -> Ensemble:
    """Read particles from ``.npz`` (arrays v, I) or JSON ({"v": [...], "I": [...]})."""
    if path.endswith(".npz"):
        with np.load(path) as z:
            v, I = z["v"], z["I"]
    else:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        v, I = np.asarray(d["v"], dtype=float), np.asarray(d["I"], dtype=float)
    return Ensemble(v, I, density / len(I))


def initial_ensemble(cfg: SimConfig, stream: int = 0) -> Ensemble:
    p = cfg.model.params
    init = cfg.init
    if init.kind == "Equilibrium":
        return sample_equilibrium(cfg.n_particles, init.T, p, cfg.seed, stream)
    if init.kind == "TwoTemperature":
        return sample_two_temperature(cfg.n_particles, init.T_kin, init.T_int, p, cfg.seed, stream)
    if init.kind == "BimodalBeams":
        return sample_bimodal_beams(cfg.n_particles, init.speed, init.T_int, p, cfg.seed, stream)
    return load_custom(init.file)


def equilibrium_temperature(init: InitSpec, params: GasParams) -> float:
    """Temperature fixed by energy conservation for the analytic initial states."""
    a = params.alpha
    if init.kind == "Equilibrium":
        return init.T
    if init.kind == "TwoTemperature":
        return (1.5 * init.T_kin + (a + 1.0) * init.T_int) / (a + 2.5)
    if init.kind == "BimodalBeams":
        return (0.5 * params.m * init.speed ** 2 / params.kB + (a + 1.0) * init.T_int) / (a + 2.5)
    raise DomainError("no analytic equilibrium temperature for Custom input")


# Collision-parameter proposals -------------------------------------------------


def propose_params(n: int, uhat: np.ndarray, spec: ModelSpec, rng: np.random.Generator):
    """Draw (r, R, sigma) from Beta(a+1, a+1) x Beta(3/2, 2a+2) x b-distribution."""
    a = spec.params.alpha
    r = rng.beta(a + 1.0, a + 1.0, n)
    R = rng.beta(1.5, 2.0 * a + 2.0, n)
    sigma = spec.angular.sample(uhat, rng)
    return r, R, sigma


def _safe_uhat(u: np.ndarray) -> np.ndarray:
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    return np.where(nu > 0, u / np.where(nu > 0, nu, 1.0), np.array([0.0, 0.0, 1.0]))


def param_acceptance(spec: ModelSpec, u2, I, Is, r, R, m_de: float) -> np.ndarray:
    """B / (sup(d_ub e_ub) b B-tilde); lies in (0, 1] by the sandwich bound."""
    bt = b_tilde_arrays(u2, np.asarray(I) + np.asarray(Is), spec.gamma, spec.params.m)
    return kernel_no_angle_arrays(spec, u2, I, Is, r, R) / (m_de * bt)


def sample_params(pair: CollisionPair, spec: ModelSpec, consts: ModelConstants | None, rng: np.random.Generator,
                  n: int = 1, batch: int = 256, max_tries: int = 10 ** 6):
    """Draw manifold parameters with density proportional to B phi psi (1-R) R^(1/2).

    Returns a :class:`CollisionParams` when ``n == 1`` and arrays
    ``(r, R, sigma)`` otherwise.
    """
    v, vs = pair.a.varr, pair.b.varr
    u = v - vs
    u2 = float(u @ u)
    if u2 == 0.0 and pair.a.I + pair.b.I == 0.0:
        raise DegenerateCollision("pair has zero collision energy")
    if u2 == 0.0 and not isinstance(spec.angular, Isotropic):
        raise DegenerateCollision("u = 0 leaves the scattering angle undefined")
    m_de = sup_de(spec)
    uhat = _safe_uhat(u[None, :])
    out_r, out_R, out_s = [], [], []
    got = tried = 0
    while got < n:
        r, R, sig = propose_params(batch, np.repeat(uhat, batch, axis=0), spec, rng)
        acc = rng.uniform(size=batch) < param_acceptance(spec, u2, pair.a.I, pair.b.I, r, R, m_de)
        tried += batch
        got += int(acc.sum())
        out_r.append(r[acc])
        out_R.append(R[acc])
        out_s.append(sig[acc])
        if tried >= max_tries and got / tried < 1e-6:
            raise RejectionStall(f"acceptance {got}/{tried} below floor")
    r = np.concatenate(out_r)[:n]
    R = np.concatenate(out_R)[:n]
    s = np.concatenate(out_s)[:n]
    if n == 1:
        return CollisionParams(float(r[0]), float(R[0]), s[0])
    return r, R, s


# NTC time stepping -------------------------------------------------------------


def _collide_candidates(ens: Ensemble, spec: ModelSpec, maj: MajorantState, rng: np.random.Generator,
                        n_cand: int, m_de: float, bracket_g: np.ndarray) -> int:
    """Process ``n_cand`` disjoint candidate pairs; returns accepted count."""
    N = ens.n
    m = spec.params.m
    g2 = 0.5 * spec.gamma
    idx = rng.choice(N, size=2 * n_cand, replace=False)
    i, j = idx[:n_cand], idx[n_cand:]
    env = bracket_g[i] + bracket_g[j]
    env_max = 2.0 * maj.max_bracket_g
    over = env > env_max * (1.0 + 1e-12)
    if np.any(over):
        n_over = int(over.sum())
        maj.violations += n_over
        warnings.warn(f"{n_over} candidate pairs exceeded the majorant", MajorantViolationWarning, stacklevel=3)
    keep = rng.uniform(size=n_cand) * env_max < env
    maj.tried += n_cand
    i, j, env = i[keep], j[keep], env[keep]
    maj.stage1 += i.size
    if i.size == 0:
        return 0
    v, vs, I, Is = ens.v[i], ens.v[j], ens.I[i], ens.I[j]
    u = v - vs
    u2 = np.einsum("ij,ij->i", u, u)
    r, R, sigma = propose_params(i.size, _safe_uhat(u), spec, rng)
    kernel = kernel_no_angle_arrays(spec, u2, I, Is, r, R)
    stage2 = kernel / (m_de * envelope_coeff(spec) * env)
    acc = rng.uniform(size=i.size) < stage2
    if not np.any(acc):
        return 0
    i, j = i[acc], j[acc]
    v2, vs2, I2, Is2, _, _, _, flags = transform_arrays(v[acc], vs[acc], I[acc], Is[acc], r[acc], R[acc], sigma[acc], m)
    ens.v[i], ens.v[j], ens.I[i], ens.I[j] = v2, vs2, I2, Is2
    new_bg = np.concatenate([bracket_sq_arrays(v2, I2, m), bracket_sq_arrays(vs2, Is2, m)]) ** g2
    bracket_g[i] = new_bg[: i.size]
    bracket_g[j] = new_bg[i.size:]
    top = float(new_bg.max())
    if top > maj.max_bracket_g:
        maj.set_max(top, spec)
    n_acc = int(i.size)
    maj.accepted += n_acc
    ens.collision_tally["collisions"] += n_acc
    nflag = int(np.count_nonzero(flags))
    if nflag:
        ens.collision_tally["degenerate_params"] += nflag
    return n_acc


def candidate_rate(ens: Ensemble, maj: MajorantState) -> float:
    """Expected candidates per unit time under the majorant."""
    N = ens.n
    return 0.5 * N * (N - 1) * ens.weight * maj.lambda_max


def step(ens: Ensemble, dt: float, spec: ModelSpec, consts: ModelConstants | None, maj: MajorantState,
         rng: np.random.Generator, bracket_g: np.ndarray | None = None) -> Ensemble:
    """Advance the ensemble by ``dt`` in place and return it.

    The candidate count carries its fractional part to the next call, so
    the long-run candidate rate is unbiased.
    """
    if dt <= 0:
        raise DomainError("dt must be > 0")
    m = spec.params.m
    if bracket_g is None:
        bracket_g = bracket_sq_arrays(ens.v, ens.I, m) ** (0.5 * spec.gamma)
    expected = candidate_rate(ens, maj) * dt + maj.remainder
    n_cand = int(math.floor(expected))
    maj.remainder = expected - n_cand
    m_de = sup_de(spec)
    half = ens.n // 2
    while n_cand > 0:
        chunk = min(n_cand, half)
        _collide_candidates(ens, spec, maj, rng, chunk, m_de, bracket_g)
        n_cand -= chunk
    ens.time += dt
    return ens


def estimate_collision_rate(ens: Ensemble, spec: ModelSpec, rng: np.random.Generator, n_pairs: int = 200_000) -> float:
    """Monte Carlo estimate of the total collision rate sum_{i<j} weight Lambda_ij."""
    N = ens.n
    i = rng.integers(0, N, n_pairs)
    j = (i + rng.integers(1, N, n_pairs)) % N
    u = ens.v[i] - ens.v[j]
    u2 = np.einsum("ij,ij->i", u, u)
    a = spec.params.alpha
    r = rng.beta(a + 1.0, a + 1.0, n_pairs)
    R = rng.beta(1.5, 2.0 * a + 2.0, n_pairs)
    kern = kernel_no_angle_arrays(spec, u2, ens.I[i], ens.I[j], r, R)
    scale = proposal_mass(a) * spec.angular.l1_norm
    return 0.5 * N * (N - 1) * ens.weight * scale * float(kern.mean())


def mean_free_time(ens: Ensemble, spec: ModelSpec, rng: np.random.Generator, n_pairs: int = 200_000) -> float:
    """N divided by the total collision rate."""
    return ens.n / estimate_collision_rate(ens, spec, rng, n_pairs)


# Diagnostics -------------------------------------------------------------------


def _log_reference(w2: np.ndarray, I: np.ndarray, T: float, params: GasParams) -> np.ndarray:
    """log of the unit-density Maxwellian divided by I^alpha at temperature T."""
    kT = params.kB * T
    a = params.alpha
    return (-0.5 * params.m * w2 / kT + 1.5 * math.log(params.m / (2.0 * math.pi * kT))
            - I / kT - (a + 1.0) * math.log(kT) - math.lgamma(a + 1.0))


def entropy_estimate(ens: Ensemble, params: GasParams, bins: int = 30, T_ref: float | None = None,
                     return_error: bool = False):
    """Estimate of the integral of f log(f I^-alpha) for isotropic f.

    Uses H(f) = int f log(f/M) + int f log M, with M the Maxwellian (divided
    by I^alpha) at ``T_ref``. The second term is an exact particle average.
    The first is a histogram of f/M over the coordinates (F_w(|v-U|),
    F_I(I)), the reference marginal CDFs, where f/M is flat at equilibrium.
    ``T_ref`` defaults to the ensemble's equivalent temperature. With
    ``return_error`` the delta method standard error is returned as well.
    """
    if bins < 10:
        raise DomainError("need at least 10 bins per axis")
    _, U, _, T_eq = observables(ens, params)
    T = T_eq if T_ref is None else T_ref
    if not T > 0:
        raise DomainError("reference temperature must be > 0")
    c = ens.v - U
    w2 = np.einsum("ij,ij->i", c, c)
    kT = params.kB * T
    a_coord = stats.chi.cdf(np.sqrt(w2 * params.m / kT), 3)
    b_coord = stats.gamma.cdf(ens.I / kT, params.alpha + 1.0)
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _, _ = np.histogram2d(a_coord, b_coord, bins=[edges, edges])
    occ = counts > 0
    if np.count_nonzero(counts[occ] < 5) > 0.5 * np.count_nonzero(occ):
        raise InsufficientSamples("more than half of the occupied cells hold fewer than 5 particles")
    ia = np.minimum((a_coord * bins).astype(int), bins - 1)
    ib = np.minimum((b_coord * bins).astype(int), bins - 1)
    g = ens.weight * counts * bins * bins
    with np.errstate(divide="ignore"):
        log_g = np.where(occ, np.log(np.where(occ, g, 1.0)), 0.0)
    L = log_g[ia, ib] + _log_reference(w2, ens.I, T, params)
    H = ens.weight * math.fsum(L.tolist())
    if not return_error:
        return H
    psi = L + 1.0
    var = ens.weight ** 2 * max(float((psi * psi).sum() - psi.sum() ** 2 / ens.n), 0.0)
    return H, math.sqrt(var)


def mann_kendall(times: Sequence[float], values: Sequence[float], alternative: str = "less"):
    """Kendall tau between time and values with its p-value (trend test)."""
    res = stats.kendalltau(np.asarray(times), np.asarray(values), alternative=alternative)
    return float(res.statistic), float(res.pvalue)


def coercivity_spotcheck(ens: Ensemble, spec: ModelSpec, data: analysis.CoercivityData,
                         probes: Sequence[MolecularState]) -> list[tuple[float, float]]:
    """Evaluate both sides of f * (|v|^gamma + (I/m)^(gamma/2)) >= c_lb <v,I>^gamma."""
    m = spec.params.m
    g = spec.gamma
    U = ens.v.mean(axis=0)
    thermal = math.sqrt(max(float(np.mean(np.einsum("ij,ij->i", ens.v - U, ens.v - U))) / 3.0, 1e-300))
    if np.linalg.norm(U) > 1e-8 * thermal:
        raise HypothesisViolation("ensemble momentum must be centred before the coercivity check")
    c_lb = data.c_lb if data.c_lb is not None else analysis.coercivity_clb(data, g)
    out = []
    for pr in probes:
        d = ens.v - pr.varr
        d2 = np.einsum("ij,ij->i", d, d)
        terms = d2 ** (0.5 * g) + ((pr.I + ens.I) / m) ** (0.5 * g)
        lhs = ens.weight * math.fsum(terms.tolist())
        rhs = c_lb * float(bracket_sq_arrays(pr.varr, pr.I, m)) ** (0.5 * g)
        out.append((lhs, rhs))
    return out


@dataclass(frozen=True)
class PovznerMCResult:
    ratio_max: float
    C_k: float
    rel_error: float

    @property
    def passed(self) -> bool:
        return self.ratio_max <= self.C_k * (1.0 + 4.0 * self.rel_error)


def povzner_mc_check(ens: Ensemble, spec: ModelSpec, consts: ModelConstants, k: float, n_samples: int,
                     rng: np.random.Generator, n_params: int = 4000) -> PovznerMCResult:
    """Largest manifold average of post-collision 2k-brackets over sampled pairs.

    For each of ``n_samples`` random pairs the integral against the
    d_ub e_ub b weighted measure is estimated with ``n_params`` draws and
    divided by (<v,I>^2 + <v_*,I_*>^2)^k.
    """
    m = spec.params.m
    a = spec.params.alpha
    _, d_ub, _, e_ub = bound_factors(spec)
    scale = proposal_mass(a) * spec.angular.l1_norm
    N = ens.n
    best = (-math.inf, 0.0)
    for _ in range(n_samples):
        i, j = rng.choice(N, 2, replace=False)
        v = np.repeat(ens.v[i][None, :], n_params, axis=0)
        vs = np.repeat(ens.v[j][None, :], n_params, axis=0)
        I = np.full(n_params, ens.I[i])
        Is = np.full(n_params, ens.I[j])
        r, R, sigma = propose_params(n_params, _safe_uhat(v - vs), spec, rng)
        v2, vs2, I2, Is2, *_ = transform_arrays(v, vs, I, Is, r, R, sigma, m)
        Eb = float(bracket_sq_arrays(ens.v[i], ens.I[i], m) + bracket_sq_arrays(ens.v[j], ens.I[j], m))
        vals = ((bracket_sq_arrays(v2, I2, m) / Eb) ** k + (bracket_sq_arrays(vs2, Is2, m) / Eb) ** k) * d_ub(r) * e_ub(R)
        mean = scale * float(vals.mean())
        se = scale * float(vals.std(ddof=1)) / math.sqrt(n_params)
        if mean > best[0]:
            best = (mean, se)
    ck = consts.kappa_ub if k == 1 else analysis.povzner_ck(k, spec, consts)
    return PovznerMCResult(best[0], ck, best[1] / best[0] if best[0] > 0 else 0.0)


# Run driver --------------------------------------------------------------------


def _probe_states(rng: np.random.Generator, n: int, T: float, params: GasParams, max_bracket: float = 10.0):
    out = []
    while len(out) < n:
        v = rng.normal(0.0, math.sqrt(2.0 * T / params.m), 3)
        I = rng.gamma(params.alpha + 1.0, 2.0 * T)
        if bracket_sq_arrays(v, I, params.m) <= max_bracket ** 2:
            out.append(MolecularState(v, I))
    return out


def run(config: SimConfig, replica: int = 0) -> Iterator[MomentReport]:
    """Advance one replica to ``t_end``, yielding a report every ``dt_report``.

    The last report's ``extra`` holds rejection statistics and the
    majorant-violation count.
    """
    spec = config.model
    params = spec.params
    rng = make_rng(config.seed, 2 * replica + 1)
    ens = initial_ensemble(config, stream=2 * replica)
    consts = partition_constants(spec)
    maj = new_majorant(ens, spec)
    diag = config.diagnostics
    orders = tuple(float(k) for k in diag.moments)

    mft = mean_free_time(ens, spec, make_rng(config.seed, 10 ** 6 + replica))
    unit = mft if config.time_unit == "mft" else 1.0
    t_end = config.t_end * unit
    dt_report = config.dt_report * unit

    T_ref = None
    if diag.entropy:
        if config.init.kind == "Custom":
            warnings.warn("entropy diagnostic assumes an isotropic ensemble", RuntimeWarning, stacklevel=2)
        # The equivalent temperature is conserved, so one reference serves the whole run.
        T_ref = observables(ens, params)[3]

    coer = None
    probes = []
    if diag.coercivity_spotcheck:
        coer = analysis.coercivity_data_from_ensemble(ens, params, config.delta)
        analysis.coercivity_clb(coer, spec.gamma)
        probes = _probe_states(make_rng(config.seed, 2 * 10 ** 6 + replica), diag.coercivity_spotcheck,
                               observables(ens, params)[3], params)

    def report(final: bool = False) -> MomentReport:
        H = None
        extra = {}
        if T_ref is not None:
            try:
                H, se = entropy_estimate(ens, params, diag.entropy_bins, T_ref, return_error=True)
                extra["entropy_se"] = se
            except InsufficientSamples:
                extra["entropy_unreliable"] = True
        rep = moment_report(ens, params, orders, diag.exp_moments, H)
        rho, U, rho_e, T = observables(ens, params)
        t_tr, t_int = partial_temperatures(ens, params)
        extra.update({"T_equiv": T, "T_tr": t_tr, "T_int": t_int, "rho_e": rho_e, "n": ens.weight * ens.n,
                      "collisions": maj.accepted, "mft": mft, "t_mft": ens.time / mft})
        if coer is not None:
            pairs = coercivity_spotcheck(ens, spec, coer, probes)
            extra["coercivity_violations"] = sum(1 for lhs, rhs in pairs if lhs < rhs)
        if final:
            extra.update(maj.stats())
        rep.extra = extra
        return rep

    yield report()
    bracket_g = bracket_sq_arrays(ens.v, ens.I, params.m) ** (0.5 * spec.gamma)
    n_reports = int(round(t_end / dt_report))
    for r_idx in range(1, n_reports + 1):
        t_target = min(r_idx * dt_report, t_end)
        while ens.time < t_target * (1 - 1e-12):
            # Re-centre the bound on the current ensemble before each block.
            maj.refresh(ens, spec)
            rate = candidate_rate(ens, maj)
            dt = min(t_target - ens.time, config.max_candidate_fraction * ens.n / rate)
            step(ens, dt, spec, consts, maj, rng, bracket_g)
        ens.time = t_target
        yield report(final=r_idx == n_reports)


def run_to_list(config: SimConfig, replica: int = 0) -> list[dict]:
    return [r.to_dict() for r in run(config, replica)]


def max_workers() -> int:
    env = os.environ.get("POLYKIN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def run_replicas(config: SimConfig, replicas: int, workers: int | None = None) -> list[list[MomentReport]]:
    """Run independent replicas (stream ids 0..replicas-1) in worker processes."""
    workers = min(replicas, workers or max_workers())
    if workers <= 1:
        return [list(run(config, r)) for r in range(replicas)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        dicts = list(ex.map(run_to_list, [config] * replicas, range(replicas)))
    return [[MomentReport.from_dict(d) for d in rep] for rep in dicts]
