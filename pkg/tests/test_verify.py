import json

import numpy as np
import pytest

from polykin import collision, verify
from polykin.core import make_rng


def _inverted(R, Rn):
    return (1.0 - Rn) * np.sqrt(Rn) / ((1.0 - np.asarray(R)) * np.sqrt(R))


def _flipped_root(R, Rn):
    return (1.0 - np.asarray(R)) * np.sqrt(Rn) / ((1.0 - np.asarray(Rn)) * np.sqrt(R))


def _no_root(R, Rn):
    return (1.0 - np.asarray(R)) / (1.0 - np.asarray(Rn))


def test_quick_suite_passes():
    results = verify.run_suite(quick=True, scale=0.05)
    assert [r.name for r in results if not r.passed] == []
    assert len(results) == 7


def test_fd_oracle_matches_closed_form_signed():
    rng = make_rng(0, 1)
    v, vs, I, Is, r, R, sigma = verify.nondegenerate_points(200, rng)
    fd = verify.fd_jacobian(v, vs, I, Is, r, R, sigma)
    out = collision.transform_arrays(v, vs, I, Is, r, R, sigma, 1.0)
    np.testing.assert_allclose(np.abs(fd), collision.jacobian_arrays(R, out[5]), rtol=1e-6)


def test_fd_oracle_symmetric_point_is_one():
    # R = m|u|^2/(4E) leaves |u| and R unchanged, so J = 1.
    v = np.array([[0.6, -0.2, 0.1]])
    vs = np.array([[-0.4, 0.3, 0.5]])
    I, Is = np.array([0.7]), np.array([0.4])
    u2 = float(np.sum((v - vs) ** 2))
    E = 0.25 * u2 + 1.1
    R = np.array([0.25 * u2 / E])
    sigma = np.array([[0.0, 0.6, 0.8]])
    fd = verify.fd_jacobian(v, vs, I, Is, np.array([0.3]), R, sigma)
    assert abs(fd[0]) == pytest.approx(1.0, rel=1e-6)


@pytest.mark.parametrize("mutant", [_inverted, _flipped_root, _no_root])
def test_jacobian_mutants_fail(mutant):
    res = verify.check_jacobian(200, jacobian_fn=mutant)
    assert not res.passed
    assert res.value > 1e-3


def test_jacobian_mutant_via_module_patch(monkeypatch):
    monkeypatch.setattr(collision, "jacobian_arrays", _inverted)
    assert not verify.check_jacobian(200).passed


def test_check_result_serializes():
    res = verify.check_povzner_cinf()
    d = res.to_dict()
    json.dumps(d, default=float)
    assert d["name"] == res.name and d["passed"] is True
    assert res.seconds >= 0


def test_scan_kbar_matches_search():
    assert verify.scan_kbar(0.125) == 22


@pytest.mark.parametrize("k", [1.0, 3.0])
def test_cinf_quadrature_independent(k):
    from polykin.analysis import povzner_cinf
    assert verify.cinf_quadrature(k) == pytest.approx(povzner_cinf(k), abs=1e-10)


def test_random_collisions_conserve():
    res = verify.check_conservation(2000, seed=5)
    assert res.passed and res.value < 1e-12


@pytest.mark.slow
def test_statistical_checks_small_scale():
    assert verify.check_coercivity(n=2000, n_ens=2, n_probes=20).passed
    assert verify.check_povzner_mc(n_pairs=20, n_params=1000, n=500).passed
