import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from polykin import analysis
from polykin.analysis import (
    CoercivityData,
    bernoulli_envelope,
    coercivity_clb,
    coercivity_data_from_ensemble,
    exp_rate_generation,
    exp_rate_propagation,
    find_kbar_star,
    k_star,
    kbar_for_threshold,
    moment_bound_coeffs,
    moment_coeffs,
    povzner_cinf,
    povzner_ck,
    povzner_ck_mc,
    povzner_table,
    propagation_bound,
    threshold_cstar,
)
from polykin.core import GasParams, poly_moment
from polykin.dsmc import sample_equilibrium
from polykin.errors import DomainError, NotFound
from polykin.models import ModelSpec, partition_constants


def cinf_exact(k: int) -> Fraction:
    # Integer-order integral of max(x, r)^k over x in [1/2, 1] (dmu = 2 dx), r in [0, 1].
    h = Fraction(1, 2)
    low = 2 * (1 - h ** (k + 1)) / (k + 1) * h
    high = (2 * ((1 - h ** (k + 2)) / (k + 2) - h * (1 - h ** (k + 1)) / (k + 1))
            + Fraction(2, k + 1) * (h - (1 - h ** (k + 2)) / (k + 2)))
    return low + high


def cinf_quad(k: float) -> float:
    f = lambda r, mu: max(0.5 * (1 + mu), r) ** k
    split = lambda mu: 0.5 * (1 + mu)
    a = integrate.dblquad(f, 0, 1, 0, split, epsabs=1e-13, epsrel=1e-13)[0]
    b = integrate.dblquad(f, 0, 1, split, 1, epsabs=1e-13, epsrel=1e-13)[0]
    return a + b


@pytest.fixture(scope="module")
def hs():
    spec = ModelSpec("Model1", 2.0, GasParams())
    return spec, partition_constants(spec)


@pytest.mark.parametrize("k,frac", [(1, Fraction(19, 24)), (2, Fraction(31, 48))])
def test_cinf_rational_values(k, frac):
    assert cinf_exact(k) == frac
    assert povzner_cinf(k) == pytest.approx(float(frac), rel=1e-15)


@pytest.mark.parametrize("k", [3, 7, 12])
def test_cinf_integer_orders_exact(k):
    assert povzner_cinf(k) == pytest.approx(float(cinf_exact(k)), rel=1e-14)


@pytest.mark.parametrize("k", [1.5, 2.0, 5.0, 10.0, 20.0])
def test_cinf_against_double_quadrature(k):
    assert povzner_cinf(k) == pytest.approx(cinf_quad(k), abs=1e-10)


@given(st.floats(1.0, 200.0), st.floats(0.01, 10.0))
def test_cinf_decreasing(k, dk):
    assert povzner_cinf(k + dk) < povzner_cinf(k)


def test_cinf_vectorized():
    ks = np.array([1.0, 2.0])
    np.testing.assert_allclose(povzner_cinf(ks), [19 / 24, 31 / 48])


@pytest.mark.parametrize("k", [2.0, 5.0, 22.0])
def test_ck_hard_sphere_prefactor(hs, k):
    spec, consts = hs
    assert povzner_ck(k, spec, consts) == pytest.approx(2 * (4 / 15) * povzner_cinf(k), rel=1e-12)


def test_lp_route_is_decreasing(hs):
    spec, consts = hs
    table = povzner_table([2, 4, 8, 16], spec, consts, p=2.0)
    assert table.is_decreasing()
    assert table.variant == "ClosedFormLp(2.0)"


def test_lp_route_needs_p_above_one(hs):
    spec, consts = hs
    with pytest.raises(DomainError):
        povzner_ck(2.0, spec, consts, p=1.0)


@pytest.mark.parametrize("k", [2.0, 5.0])
def test_ck_monte_carlo_matches_closed_form(hs, k):
    spec, consts = hs
    est, se = povzner_ck_mc(k, spec, consts, n_samples=200_000, seed=4, workers=2)
    assert abs(est - povzner_ck(k, spec, consts)) < 4 * se


def test_ck_monte_carlo_deterministic(hs):
    spec, consts = hs
    a = povzner_ck_mc(3.0, spec, consts, n_samples=10_000, seed=9, workers=3)
    b = povzner_ck_mc(3.0, spec, consts, n_samples=10_000, seed=9, workers=3)
    assert a == b


def test_threshold_hard_sphere(hs):
    spec, consts = hs
    assert threshold_cstar(spec, consts) == pytest.approx(0.125, abs=1e-12)
    kbar = find_kbar_star(spec, consts)
    # Linear scan oracle.
    scan = next(k for k in range(2, 1000) if povzner_cinf(k) < 0.125)
    assert kbar == scan == 22


@pytest.mark.parametrize("model,cstar,kbar", [("Model2", 0.20785, 13), ("Model3", 0.05196, 56)])
def test_threshold_other_models(model, cstar, kbar):
    spec = ModelSpec(model, 2.0)
    consts = partition_constants(spec)
    assert threshold_cstar(spec, consts) == pytest.approx(cstar, abs=1e-5)
    scan = next(k for k in range(2, 1000) if povzner_cinf(k) < threshold_cstar(spec, consts))
    assert find_kbar_star(spec, consts) == scan == kbar


def test_threshold_rejects_negative_alpha():
    spec = ModelSpec("Model1", 2.0, GasParams(alpha=-0.5))
    with pytest.raises(DomainError):
        threshold_cstar(spec, partition_constants(spec))


def test_kbar_not_found():
    with pytest.raises(NotFound):
        kbar_for_threshold(1e-9, k_max=100)


@pytest.mark.parametrize("kbar,gamma,delta,expected", [(22, 2.0, 1.0, 22.0), (1, 2.0, 1.0, 3.0), (1, 0.5, 4.0, 3.0)])
def test_k_star(kbar, gamma, delta, expected):
    assert k_star(kbar, gamma, delta) == expected


class TestCoercivity:
    def test_gamma_zero(self):
        assert coercivity_clb(CoercivityData(1.0, 1.0, 1.0, 1.0, 1.0), 0.0) == 2.0

    def test_hand_computed_values(self):
        d = CoercivityData(1.0, 1.0, 1.5, 1.5, 3.0, delta=1.0)
        clb = coercivity_clb(d, 2.0)
        rho = (2 * 2.5 / (1.0 - 0.125)) ** 0.5
        S = 2 ** 5 * 3.0 / 1.5 * (1 + rho ** 2) ** 1.5
        assert d.rho_star == pytest.approx(rho, rel=1e-14)
        assert d.S_of_rho == pytest.approx(S, rel=1e-8)
        assert clb == pytest.approx(1.0 / 8.0 / (1 + rho ** 2), rel=1e-14)

    @pytest.mark.parametrize("bad", [
        dict(M_l=0.0, M_u=1.0, E_l=1.0, E_u=1.0, Delta=1.0),
        dict(M_l=1.0, M_u=1.0, E_l=0.0, E_u=1.0, Delta=1.0),
        dict(M_l=1.0, M_u=1.0, E_l=1.0, E_u=1.0, Delta=1.0, delta=0.0),
    ])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            coercivity_clb(CoercivityData(**bad), 1.0)

    def test_gamma_range(self):
        with pytest.raises(DomainError):
            coercivity_clb(CoercivityData(1.0, 1.0, 1.0, 1.0, 1.0), 2.5)

    def test_ensemble_data(self):
        ens = sample_equilibrium(5000, 1.0, GasParams(), seed=2)
        d = coercivity_data_from_ensemble(ens, GasParams())
        assert d.M_l == pytest.approx(1.0)
        # Mean of |v|^2/2 + I at T = 1, alpha = 0 is 5/2.
        assert d.E_l == pytest.approx(2.5, rel=0.05)


class TestBernoulli:
    def test_against_ode_solver(self):
        a, b, c, y0 = 0.7, 1.3, 0.4, 5.0
        sol = integrate.solve_ivp(lambda t, y: -a * y ** (1 + c) + b * y, (0, 2.0), [y0], rtol=1e-11, atol=1e-12)
        assert bernoulli_envelope(a, b, c, y0, 2.0) == pytest.approx(sol.y[0, -1], rel=1e-8)

    def test_infinite_start_and_steady_state(self):
        a, b, c = 2.0, 1.0, 0.5
        assert math.isfinite(bernoulli_envelope(a, b, c, math.inf, 0.1))
        assert bernoulli_envelope(a, b, c, 3.0, 200.0) == pytest.approx((b / a) ** (1 / c), rel=1e-12)
        assert bernoulli_envelope(a, b, c, 3.0, 0.0) == pytest.approx(3.0)

    def test_domain(self):
        with pytest.raises(DomainError):
            bernoulli_envelope(0.0, 1.0, 1.0, 1.0, 1.0)

    @given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.05, 2), st.floats(0.1, 50), st.floats(0, 10))
    def test_between_start_and_steady_state(self, a, b, c, y0, t):
        y = bernoulli_envelope(a, b, c, y0, t)
        ss = (b / a) ** (1 / c)
        assert min(y0, ss) * (1 - 1e-9) <= y <= max(y0, ss) * (1 + 1e-9)


@pytest.fixture(scope="module")
def coeffs(hs):
    spec, consts = hs
    ens = sample_equilibrium(20_000, 1.0, spec.params, seed=1)
    data = coercivity_data_from_ensemble(ens, spec.params)
    m0 = poly_moment(ens, 0.0, spec.params)
    m1 = poly_moment(ens, 1.0, spec.params)
    return moment_bound_coeffs(spec, consts, data, m0, m1, ks=(22.0, 24.0))


class TestMomentCoefficients:
    def test_kstar_and_decay(self, coeffs):
        assert coeffs.k_star == 22.0
        assert coeffs.C_kstar < coeffs.kappa_lb
        assert coeffs.A_kstar > 0 and coeffs.eps > 0

    def test_one_minus_theta(self, coeffs):
        ks = np.array([23.0, 50.0, 1e4])
        np.testing.assert_allclose(coeffs.one_minus_theta(ks), 1.0 - coeffs.theta(ks), rtol=1e-9)

    def test_entries(self, coeffs):
        a, b, c = coeffs.bernoulli[24.0]
        assert (a, c) == (coeffs.A_kstar, 2.0 / 48.0)
        assert b == pytest.approx(coeffs.B(24.0))

    def test_order_below_kstar(self, hs, coeffs):
        spec, consts = hs
        data = CoercivityData(1.0, 1.0, 2.5, 2.5, 5.0)
        with pytest.raises(DomainError):
            moment_coeffs(spec, consts, 1.0, 3.5, 10.0, data)

    def test_propagation_bound_dominates_initial(self, coeffs):
        assert propagation_bound(coeffs, 22.0, 1e3) >= 1e3
        big = propagation_bound(coeffs, 22.0, 1e300)
        assert big >= 1e300

    def test_generation_bound_decreasing_in_time(self, coeffs):
        g = [analysis.log_generation_bound(coeffs, 24.0, t) for t in (0.1, 0.5, 2.0)]
        assert g[0] >= g[1] >= g[2]
        with pytest.raises(DomainError):
            analysis.log_generation_bound(coeffs, 24.0, 0.0)


@pytest.mark.slow
class TestExpRates:
    def test_propagation_rate(self, coeffs):
        rate = exp_rate_propagation(coeffs, 1.0, 0.1, 1.0)
        assert rate.log_beta <= math.log(0.1)
        assert rate.log_beta <= math.log(math.log(2.0))
        assert math.isfinite(rate.log_beta)
        assert rate.beta == pytest.approx(math.exp(rate.log_beta), abs=0)
        assert rate.k0 > coeffs.k_star

    def test_generation_rate(self, coeffs):
        rate = exp_rate_generation(coeffs, 10.0)
        assert rate.log_beta <= math.log(math.log(2.0))
        assert rate.log_beta <= math.log(0.5 * coeffs.c_lb * (coeffs.kappa_lb - coeffs.C_kstar))
        assert rate.beta >= 0.0

    def test_domain(self, coeffs):
        with pytest.raises(DomainError):
            exp_rate_propagation(coeffs, 1.5, 0.1, 1.0)
        with pytest.raises(DomainError):
            exp_rate_generation(coeffs, 0.0)
