import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from polykin.collision import CollisionPair, CollisionParams, transform
from polykin.core import GasParams, MolecularState, make_rng
from polykin.dsmc import sample_params
from polykin.errors import DomainError, UnsupportedAngular
from polykin.models import (
    Isotropic,
    ModelConstants,
    ModelSpec,
    TablePdf,
    angular_from_config,
    bound_factors,
    model1_closed_form,
    partition_constants,
    proposal_mass,
    sandwich_arrays,
    sup_de,
    transition,
)

from conftest import all_specs


def test_model1_closed_values_hard_sphere_like():
    c_lb, c_ub, C_lb, C_ub = model1_closed_form(2.0, 0.0)
    assert c_lb == c_ub == pytest.approx(1.0, abs=1e-15)
    assert C_ub == pytest.approx(4.0 / 15.0, rel=1e-14)
    assert C_lb == pytest.approx(1.0 / 15.0, rel=1e-14)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 2.0])
@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_model1_closed_matches_quadrature(alpha, gamma):
    spec = ModelSpec("Model1", gamma, GasParams(alpha=alpha))
    closed = partition_constants(spec, method="closed")
    quad = partition_constants(spec, method="quad")
    for a, b in zip(closed.to_dict().values(), quad.to_dict().values()):
        assert a == pytest.approx(b, rel=1e-10)


@pytest.mark.parametrize("model", ["Model2", "Model3"])
@pytest.mark.parametrize("variant", ["minmax", "product"])
@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_quadrature_against_plain_integration(model, variant, alpha):
    # Independent route: unweighted quad with the weight folded into the integrand.
    spec = ModelSpec(model, 1.0, GasParams(alpha=alpha), variant=variant)
    consts = partition_constants(spec)
    d_lb, d_ub, e_lb, e_ub = bound_factors(spec)
    opts = dict(points=[0.5], limit=400, epsabs=1e-13)
    c_lb = integrate.quad(lambda r: float(d_lb(r)) * (r * (1 - r)) ** alpha, 0, 1, **opts)[0]
    C_ub = integrate.quad(lambda R: float(e_ub(R)) * (1 - R) ** (2 * alpha + 1) * math.sqrt(R), 0, 1, **opts)[0]
    assert consts.c_lb_r == pytest.approx(c_lb, rel=1e-9)
    assert consts.C_ub_R == pytest.approx(C_ub, rel=1e-9)
    assert consts.kappa_lb == pytest.approx(consts.c_lb_r * consts.C_lb_R)


def test_closed_method_rejected_for_other_models():
    with pytest.raises(DomainError):
        partition_constants(ModelSpec("Model2", 1.0), method="closed")


def test_constants_validation():
    with pytest.raises(DomainError):
        ModelConstants(2.0, 1.0, 0.1, 0.2, 0.2, 0.2)


@pytest.mark.parametrize("gamma", [0.0, -1.0, 2.5])
def test_spec_rejects_gamma(gamma):
    with pytest.raises(DomainError):
        ModelSpec("Model1", gamma)


def test_spec_rejects_unknown_model():
    with pytest.raises(DomainError):
        ModelSpec("Model4", 1.0)


def test_proposal_mass_alpha_zero():
    assert proposal_mass(0.0) == pytest.approx(4.0 / 15.0, rel=1e-14)


@pytest.mark.parametrize("model,gamma,expected", [
    ("Model1", 2.0, 1.0),
    ("Model2", 1.0, 1.0),
    ("Model3", 2.0, 1.0),
    ("Model3", 1.0, math.sqrt(2.0)),
])
def test_sup_de(model, gamma, expected):
    assert sup_de(ModelSpec(model, gamma)) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("spec", all_specs(), ids=lambda s: f"{s.model}-g{s.gamma}-a{s.params.alpha}")
def test_sandwich_random_tuples(spec):
    rng = make_rng(7, 0)
    n = 20_000
    v = rng.normal(size=(n, 3)) * 2
    vs = rng.normal(size=(n, 3)) * 2
    I = rng.exponential(2.0, n)
    Is = rng.exponential(2.0, n)
    r = rng.uniform(size=n)
    R = rng.uniform(size=n)
    sig = rng.normal(size=(n, 3))
    sig /= np.linalg.norm(sig, axis=1, keepdims=True)
    lo, val, hi = sandwich_arrays(spec, v, vs, I, Is, r, R, sig)
    assert np.all(lo <= val * (1 + 1e-12))
    assert np.all(val <= hi * (1 + 1e-12))


@given(
    st.sampled_from(["Model1", "Model2", "Model3"]),
    st.floats(0.1, 2.0),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
    st.floats(0.0, 20.0),
)
def test_sandwich_property(model, gamma, r, R, Iint):
    spec = ModelSpec(model, gamma)
    lo, val, hi = sandwich_arrays(spec, np.array([1.0, 0.5, 0]), np.array([-0.3, 0, 2]), 0.3 * Iint, 0.7 * Iint,
                                  r, R, np.array([0, 0, 1.0]))
    assert lo <= val * (1 + 1e-12) + 1e-300
    assert val <= hi * (1 + 1e-12) + 1e-300


@pytest.mark.parametrize("model", ["Model1", "Model2", "Model3"])
def test_transition_microreversible(model):
    spec = ModelSpec(model, 1.3, GasParams(alpha=0.5))
    rng = make_rng(3, 0)
    for _ in range(50):
        pair = CollisionPair(MolecularState(tuple(rng.normal(size=3)), float(rng.exponential())),
                             MolecularState(tuple(rng.normal(size=3)), float(rng.exponential())))
        s = rng.normal(size=3)
        cp = CollisionParams(float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.05, 0.95)), tuple(s / np.linalg.norm(s)))
        out, back = transform(pair, cp, spec.params)
        assert transition(out, back, spec) == pytest.approx(transition(pair, cp, spec), rel=1e-10)


class TestTablePdf:
    def test_constant_table_matches_isotropic(self):
        t = TablePdf([-1, 0, 1], np.full(3, 1 / (4 * math.pi)))
        assert t.l1_norm == pytest.approx(Isotropic().l1_norm)
        assert t.linf_norm == pytest.approx(Isotropic().linf_norm)
        assert t.lp_norm(2.0) == pytest.approx(Isotropic().lp_norm(2.0))

    def test_linear_table_sampler_ks(self):
        t = TablePdf([-1, 1], [0.0, 1.0])
        mu = t.sample_mu(50_000, make_rng(1, 0))
        # density (1 + mu)/2 on [-1, 1]
        p = stats.kstest(mu, lambda x: (1 + x) ** 2 / 4).pvalue
        assert p > 0.01

    def test_sample_directions_are_unit_and_aligned(self):
        t = TablePdf([-1, 1], [0.0, 1.0])
        uhat = np.tile([0.0, 0.6, 0.8], (10_000, 1))
        s = t.sample(uhat, make_rng(2, 0))
        np.testing.assert_allclose(np.linalg.norm(s, axis=1), 1.0, atol=1e-12)
        assert np.mean(s @ uhat[0]) == pytest.approx(1 / 3, abs=0.02)

    @pytest.mark.parametrize("mu,vals", [
        ([0, 1], [1, 1]),
        ([-1, 1], [-1, 1]),
        ([-1, 1], [0, 0]),
        ([-1, 1, 0.5], [1, 1, 1]),
    ])
    def test_bad_tables(self, mu, vals):
        with pytest.raises(DomainError):
            TablePdf(mu, vals)

    def test_config_round_trip(self):
        t = TablePdf([-1, 0, 1], [1, 2, 3])
        t2 = angular_from_config(t.to_config())
        np.testing.assert_array_equal(t2.values, t.values)
        assert isinstance(angular_from_config(None), Isotropic)


def test_isotropic_lp_norm_unsupported_only_for_base():
    from polykin.models import AngularFn
    with pytest.raises(UnsupportedAngular):
        AngularFn().lp_norm(2.0)


def test_model1_parameter_marginals_are_beta():
    alpha = 0.5
    spec = ModelSpec("Model1", 2.0, GasParams(alpha=alpha))
    pair = CollisionPair(MolecularState((1.0, 0, 0), 0.4), MolecularState((-0.5, 0.2, 0), 1.1))
    r, R, sig = sample_params(pair, spec, None, make_rng(11, 0), n=100_000)
    assert stats.kstest(r, stats.beta(alpha + 1, alpha + 1).cdf).pvalue > 0.01
    assert stats.kstest(R, stats.beta(1.5, 2 * alpha + 2).cdf).pvalue > 0.01
    assert stats.kstest(sig[:, 2], stats.uniform(-1, 2).cdf).pvalue > 0.01


def test_model2_parameter_weighting():
    # With I = I_* = 0 and gamma = 2, the R density gains a factor R.
    spec = ModelSpec("Model2", 2.0, GasParams(alpha=0.0))
    pair = CollisionPair(MolecularState((1.0, 0, 0), 0.0), MolecularState((-1.0, 0, 0), 0.0))
    _, R, _ = sample_params(pair, spec, None, make_rng(12, 0), n=50_000)
    assert stats.kstest(R, stats.beta(2.5, 2.0).cdf).pvalue > 0.01
