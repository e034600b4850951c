import numpy as np
import pytest

from lbkit.potential import PotentialModel, fourier_potential, validate_assumption


def test_inverse_power_at_zero():
    pm = PotentialModel.default(2)  # s = d + 4 = 6
    assert fourier_potential(pm, 0.0) == 1.0


def test_inverse_power_at_one():
    pm = PotentialModel(s=6.0, s_prime=6.0, amplitude=1.0)
    assert fourier_potential(pm, 1.0) == pytest.approx(0.125, abs=1e-15)


def test_two_sided_bound_scan():
    # dense |k| scan: V^2 (1+|k|)^s must stay inside [1/C, C], C = amp^2 + 1e-12
    pm = PotentialModel.default(2)
    k = np.linspace(0.0, 50.0, 5000)
    ratio = fourier_potential(pm, k) ** 2 * (1.0 + k) ** pm.s
    c = pm.amplitude**2 + 1e-12
    assert np.all(ratio <= c)
    assert np.all(ratio >= 1.0 / c)


def test_validation_passes_for_default():
    rep = validate_assumption(PotentialModel(s=6.0, s_prime=6.0), d=2)
    assert rep.passed


def test_validation_fails_below_threshold():
    rep = validate_assumption(PotentialModel(s=5.0, s_prime=7.0), d=3)
    assert not rep.checks["s_exceeds_d_plus_3"]
    assert rep.checks["s_prime_exceeds_d_plus_3"]


def test_gaussian_like_derivative_decay():
    pm = PotentialModel(s=6.0, s_prime=6.0, form="gaussian_like")
    rep = validate_assumption(pm, d=2)
    assert rep.checks["derivative_decay_bounded"]


def test_radial_api_only_accepts_norm():
    # rotations cannot change the value because the API only receives |k|;
    # the only deviation possible is the roundoff of the norm itself
    pm = PotentialModel.default(2)
    rng = np.random.default_rng(7)
    k = rng.normal(size=2)
    theta = rng.uniform(0, 2 * np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    assert fourier_potential(pm, float(np.linalg.norm(k))) == fourier_potential(
        pm, float(np.linalg.norm(k)))
    assert fourier_potential(pm, np.linalg.norm(rot @ k)) == pytest.approx(
        fourier_potential(pm, np.linalg.norm(k)), rel=1e-14)


def test_monotone_decay():
    pm = PotentialModel.default(2)
    k = np.linspace(0, 40, 400)
    v = fourier_potential(pm, k)
    assert np.all(np.diff(v) <= 0)


def test_negative_wavenumber_rejected():
    pm = PotentialModel.default(2)
    with pytest.raises(ValueError):
        fourier_potential(pm, -0.5)


def test_tabulated_roundtrip_and_domain_error():
    base = PotentialModel.default(2)
    k = np.geomspace(1e-3, 60.0, 400)
    tab = PotentialModel.tabulated(k, fourier_potential(base, k), s=6.0, s_prime=6.0)
    kq = np.geomspace(2e-3, 50.0, 57)
    np.testing.assert_allclose(fourier_potential(tab, kq),
                               fourier_potential(base, kq), rtol=1e-5)
    with pytest.raises(ValueError):
        fourier_potential(tab, 100.0)
