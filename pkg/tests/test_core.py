import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polykin.core import (
    Ensemble,
    GasParams,
    MolecularState,
    MomentReport,
    bracket,
    exp_moment,
    log_exp_moment,
    log_poly_moment,
    make_rng,
    moment_report,
    observables,
    partial_temperatures,
    poly_moment,
    total_energy,
    total_momentum,
)
from polykin.errors import DomainError, MomentOverflowWarning

finite = st.floats(-50, 50, allow_nan=False)


def test_bracket_at_origin_is_one():
    assert bracket(MolecularState((0, 0, 0), 0.0), GasParams()) == 1.0


def test_bracket_value():
    # 1 + |v|^2/2 + I/m = 1 + 7 + 2 = 10
    s = MolecularState((2.0, 0.0, 3.0), 4.0)
    assert bracket(s, GasParams(m=2.0)) == pytest.approx(math.sqrt(1 + 6.5 + 2.0), rel=1e-15)


@given(st.tuples(finite, finite, finite), st.floats(0, 100))
def test_bracket_at_least_one(v, I):
    assert bracket(MolecularState(v, I), GasParams()) >= 1.0


@pytest.mark.parametrize("kwargs", [{"m": 0.0}, {"m": -1.0}, {"alpha": -1.0}, {"alpha": -2.0}, {"kB": 0.0}])
def test_gas_params_rejects(kwargs):
    with pytest.raises(DomainError):
        GasParams(**kwargs)


def test_dof():
    assert GasParams(alpha=0.5).dof == 6.0


@pytest.mark.parametrize("I", [-1e-9, float("nan")])
def test_state_rejects_bad_energy(I):
    with pytest.raises(DomainError):
        MolecularState((0, 0, 0), I)


def test_ensemble_validation():
    with pytest.raises(DomainError):
        Ensemble(np.zeros((2, 3)), np.zeros(3), 0.5)
    with pytest.raises(DomainError):
        Ensemble(np.zeros((2, 3)), np.array([0.0, -1.0]), 0.5)
    with pytest.raises(DomainError):
        Ensemble(np.zeros((2, 3)), np.zeros(2), 0.0)


def _two_particle():
    return Ensemble(np.array([[1.0, 0, 0], [-1.0, 0, 0]]), np.array([0.5, 1.5]), 0.5)


def test_poly_moment_order_zero_is_mass():
    assert poly_moment(_two_particle(), 0, GasParams()) == 1.0


def test_poly_moment_order_one():
    # brackets^2: 1 + 0.5 + 0.5 = 2 and 1 + 0.5 + 1.5 = 3
    assert poly_moment(_two_particle(), 1, GasParams()) == pytest.approx(2.5, rel=1e-15)


def test_poly_moment_rejects_negative_order():
    with pytest.raises(DomainError):
        poly_moment(_two_particle(), -1, GasParams())


def test_poly_moment_overflow_warns():
    ens = Ensemble(np.array([[1e3, 0, 0]]), np.array([0.0]), 1.0)
    with pytest.warns(MomentOverflowWarning):
        assert poly_moment(ens, 200.0, GasParams()) == math.inf
    assert math.isfinite(log_poly_moment(ens, 200.0, GasParams()))


def test_log_poly_moment_matches():
    ens = _two_particle()
    assert log_poly_moment(ens, 2.5, GasParams()) == pytest.approx(math.log(poly_moment(ens, 2.5, GasParams())), rel=1e-14)


@pytest.mark.parametrize("s,beta", [(0.0, 1.0), (1.5, 1.0), (0.5, 0.0), (0.5, -1.0)])
def test_exp_moment_domain(s, beta):
    with pytest.raises(DomainError):
        exp_moment(_two_particle(), s, beta, GasParams())


def test_exp_moment_value_and_log():
    ens = _two_particle()
    expect = 0.5 * (math.exp(0.1 * 2.0) + math.exp(0.1 * 3.0))
    assert exp_moment(ens, 1.0, 0.1, GasParams()) == pytest.approx(expect, rel=1e-15)
    assert log_exp_moment(ens, 1.0, 0.1, GasParams()) == pytest.approx(math.log(expect), rel=1e-14)


def test_exp_moment_overflow():
    ens = Ensemble(np.array([[100.0, 0, 0]]), np.array([0.0]), 1.0)
    with pytest.warns(MomentOverflowWarning):
        assert exp_moment(ens, 1.0, 1.0, GasParams()) == math.inf


def test_observables_two_particles():
    rho, U, rho_e, T = observables(_two_particle(), GasParams())
    assert rho == 1.0
    np.testing.assert_allclose(U, 0.0, atol=1e-16)
    # kinetic 0.5 each, internal 0.5 and 1.5, weight 0.5
    assert rho_e == pytest.approx(1.5)
    assert T == pytest.approx(1.5 / 2.5)


def test_partial_temperatures():
    t_tr, t_int = partial_temperatures(_two_particle(), GasParams())
    assert t_tr == pytest.approx(2.0 / 6.0)
    assert t_int == pytest.approx(1.0)


def test_momentum_and_energy():
    ens = _two_particle()
    np.testing.assert_allclose(total_momentum(ens, GasParams()), 0.0, atol=1e-16)
    assert total_energy(ens, GasParams()) == pytest.approx(1.5)


def test_rng_streams_reproducible_and_distinct():
    a = make_rng(7, 0).random(4)
    b = make_rng(7, 0).random(4)
    c = make_rng(7, 1).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_report_roundtrip_and_csv():
    ens = _two_particle()
    rep = moment_report(ens, GasParams(), (0.0, 1.0, 2.0), ((1.0, 0.1),), entropy=-1.0)
    back = MomentReport.from_dict(rep.to_dict())
    assert back.poly_moments == rep.poly_moments
    assert back.exp_moments == rep.exp_moments
    assert back.entropy_estimate == -1.0
    assert rep.check_monotone()
    header = MomentReport.csv_header((1.0, 2.5))
    assert header == ["t", "rho", "Ux", "Uy", "Uz", "E_tot", "m_1", "m_2.5", "entropy"]
    assert len(rep.csv_row((1.0, 2.0))) == 9


@given(st.lists(st.floats(0, 30), min_size=2, max_size=6, unique=True))
def test_moments_monotone_in_order(orders):
    ens = Ensemble(make_rng(1, 0).normal(size=(50, 3)), make_rng(1, 1).exponential(size=50), 0.02)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MomentOverflowWarning)
        rep = moment_report(ens, GasParams(), sorted(orders))
    assert rep.check_monotone()


def test_ensemble_views():
    ens = _two_particle()
    assert len(ens) == 2
    assert ens[1].I == 1.5
    assert len(ens.particles) == 2
    c = ens.copy()
    c.v[0, 0] = 9.0
    assert ens.v[0, 0] == 1.0
