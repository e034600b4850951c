import math

import numpy as np
import pytest
from scipy.integrate import quad

from lbkit.dielectric import (
    ScreeningTable,
    epsilon_classical,
    epsilon_hbar,
    epsilon_hbar_to_classical_gap,
    epsilon_tilde,
    perpendicular_marginal,
    pv_cauchy,
    pv_cauchy_odd_grid,
)
from lbkit.errors import SingularWavevectorError
from lbkit.fields import DistributionField, GaussianMixtureProfile, VelocityGrid
from lbkit.potential import PotentialModel

E1 = np.array([1.0, 0.0])

# frozen from the smoothed-denominator oracle: 2-D midpoint quadrature of the
# defining velocity integral with -i*eta regularization, eta in {1e-1, 1e-2,
# 1e-3}, quadratic extrapolation to eta = 0, grid-converged at h = 1e-3
ORACLE_EPS_HBAR = 1.0907097496462925 - 0.07394777177441j  # hbar=.1, |k|=1, k.v=.5


def _gauss(u):
    return np.exp(-(u**2) / 2) / math.sqrt(2 * math.pi)


def _dgauss(u):
    return -u * _gauss(u)


class TestPrincipalValue:
    def test_two_evaluators_agree_gaussian_derivative(self):
        u = np.linspace(-14, 14, 4001)
        for w in [0.0, 0.37, 1.7, -2.3]:
            a = pv_cauchy(_dgauss(u), u, w)
            b = pv_cauchy_odd_grid(_dgauss, w)
            assert abs(a - b) < 1e-6

    def test_against_quadpack_cauchy_weight(self):
        u = np.linspace(-14, 14, 4001)
        for w in [0.1, 0.9, -1.4]:
            ref = -quad(_dgauss, -14, 14, weight="cauchy", wvar=w)[0]
            assert abs(pv_cauchy(_dgauss(u), u, w) - ref) < 1e-8


class TestMarginal:
    def test_maxwellian_marginal_is_standard_gaussian(self, maxwellian2):
        for khat in [E1, np.array([0.6, 0.8])]:
            m = perpendicular_marginal(maxwellian2, khat)
            u = np.linspace(-4, 4, 101)
            np.testing.assert_allclose(m(u), _gauss(u), atol=1e-6)

    def test_shifted_maxwellian_marginal(self, grid2):
        a = np.array([0.7, -0.3])
        fld = DistributionField.from_profile(grid2, GaussianMixtureProfile.shifted(a))
        khat = np.array([0.8, 0.6])
        m = perpendicular_marginal(fld, khat)
        u = np.linspace(-4, 4, 81)
        np.testing.assert_allclose(m(u), _gauss(u - khat @ a), atol=1e-6)

    def test_mass_preserved(self, bi_maxwellian2):
        m = perpendicular_marginal(bi_maxwellian2, np.array([0.0, 1.0]))
        assert abs(m.mass() - 1.0) < 1e-6

    def test_grid_backed_marginal_matches_brute_slice_sum(self, grid2):
        # bump mixture sampled on the grid only; oracle = direct row sums
        prof = GaussianMixtureProfile([0.8, 0.2], [[0.0, 0.0], [1.1, 0.0]])
        fld = DistributionField(grid=grid2, kind="density",
                                values=prof(grid2.nodes))
        m = perpendicular_marginal(fld, E1)
        mesh = grid2.to_mesh(fld.values * grid2.mask_values())
        brute = mesh.sum(axis=1) * grid2.h
        interp = m(grid2.axis)
        np.testing.assert_allclose(interp, brute, atol=2e-4)


class TestEpsilonHbar:
    def test_zero_potential_gives_unity(self, maxwellian2, potential_zero):
        e = epsilon_hbar(maxwellian2, E1, np.array([0.5, 0.2]), 0.2, potential_zero)
        assert e.re == 1.0 and e.im == 0.0

    def test_gaussian_midpoint_symmetry_kills_imaginary_part(self, maxwellian2, potential2):
        # k.v = -hbar |k| / 2 puts the difference symmetric around the peak
        hbar, kn = 0.3, 1.4
        v = np.array([-hbar * kn / 2 / kn, 0.0]) * kn
        e = epsilon_hbar(maxwellian2, kn * E1, v, hbar, potential2)
        assert abs(e.im) < 1e-8

    def test_matches_smoothed_denominator_oracle(self, maxwellian2, potential2):
        e = epsilon_hbar(maxwellian2, E1, np.array([0.5, 0.0]), 0.1, potential2)
        assert abs(complex(e.re, e.im) - ORACLE_EPS_HBAR) < 1e-4

    def test_singular_wavevector_rejected(self, maxwellian2, potential2):
        with pytest.raises(SingularWavevectorError):
            epsilon_hbar(maxwellian2, np.array([0.0, 1e-13]), np.zeros(2), 0.1, potential2)

    def test_affine_in_the_density_at_quadrature_level(self, grid2, potential2):
        rng = np.random.default_rng(3)
        sqm = grid2.sqrt_maxwellian_values()
        mx = grid2.maxwellian_values()
        g1 = 1e-2 * np.exp(-grid2.speed() ** 2 / 3) * rng.normal(size=grid2.n_nodes)
        g2 = 1e-2 * np.exp(-grid2.speed() ** 2 / 2.5) * rng.normal(size=grid2.n_nodes)

        def eps_of(vals):
            fld = DistributionField(grid=grid2, kind="density", values=vals)
            e = epsilon_hbar(fld, 0.8 * E1, np.array([0.3, 0.1]), 0.2, potential2)
            return complex(e.re, e.im)

        lhs = eps_of(mx + sqm * (g1 + g2)) - 1.0
        rhs = (eps_of(mx + sqm * g1) - 1.0) + (eps_of(mx + sqm * g2) - 1.0) - (eps_of(mx) - 1.0)
        assert abs(lhs - rhs) < 1e-12

    def test_stability_under_shrinking_perturbations(self, grid2, potential2):
        rng = np.random.default_rng(11)
        sqm = grid2.sqrt_maxwellian_values()
        mx = grid2.maxwellian_values()
        base = np.exp(-grid2.speed() ** 2 / 3) * rng.normal(size=grid2.n_nodes)
        k, v = 0.7 * E1, np.array([0.4, -0.2])
        ref = epsilon_hbar(DistributionField(grid=grid2, kind="density", values=mx),
                           k, v, 0.2, potential2)
        gaps = []
        for amp in [4e-2, 2e-2, 1e-2]:
            fld = DistributionField(grid=grid2, kind="density", values=mx + sqm * amp * base)
            e = epsilon_hbar(fld, k, v, 0.2, potential2)
            gaps.append(abs(complex(e.re, e.im) - complex(ref.re, ref.im)))
        assert gaps[0] > gaps[1] > gaps[2]


class TestEpsilonClassical:
    def test_zero_potential(self, maxwellian2, potential_zero):
        e = epsilon_classical(maxwellian2, E1, np.zeros(2), potential_zero)
        assert (e.re, e.im) == (1.0, 0.0)

    def test_imaginary_part_vanishes_at_zero_velocity(self, maxwellian2, potential2):
        e = epsilon_classical(maxwellian2, 2.0 * E1, np.zeros(2), potential2)
        assert abs(e.im) < 1e-8

    def test_nondegeneracy_scan(self, maxwellian2, potential2):
        # |eps_0| stays within [0.5, 2] over the default scan window
        mods = []
        for kn in np.geomspace(0.1, 10.0, 12):
            for kdv in np.linspace(-4, 4, 9):
                e = epsilon_classical(maxwellian2, kn * E1, np.array([kdv, 0.0]), potential2)
                mods.append(e.abs)
        assert min(mods) > 0.5 and max(mods) < 2.0


class TestGap:
    def test_zero_potential_gap_vanishes(self, maxwellian2, potential_zero):
        g = epsilon_hbar_to_classical_gap(maxwellian2, E1, np.array([0.5, 0.0]),
                                          0.2, potential_zero)
        assert g == 0.0

    def test_loglog_slope_is_one(self, maxwellian2, potential2):
        hs = np.array([0.4, 0.2, 0.1, 0.05])
        v = np.array([0.5, 0.0])
        gaps = [epsilon_hbar_to_classical_gap(maxwellian2, E1, v, h, potential2)
                for h in hs]
        slope = np.polyfit(np.log(hs), np.log(gaps), 1)[0]
        assert abs(slope - 1.0) < 0.15

    def test_linear_bound_with_scan_constant(self, maxwellian2, potential2):
        # C frozen from the hbar-scan of this configuration
        v = np.array([0.5, 0.0])
        c_scan = max(
            epsilon_hbar_to_classical_gap(maxwellian2, E1, v, h, potential2) / h
            for h in [0.4, 0.2, 0.1, 0.05])
        g = epsilon_hbar_to_classical_gap(maxwellian2, E1, v, 0.2, potential2)
        assert g <= c_scan * 0.2 * (1 + 1e-12)


class TestEpsilonTilde:
    def test_zero_potential(self, maxwellian2, potential_zero):
        e = epsilon_tilde(maxwellian2, E1, 0.3 + 0.7j, 0.2, potential_zero)
        assert (e.re, e.im) == (1.0, 0.0)

    def test_real_omega_rejected(self, maxwellian2, potential2):
        with pytest.raises(ValueError):
            epsilon_tilde(maxwellian2, E1, 0.5 + 0.0j, 0.2, potential2)

    def test_conjugation_symmetry(self, maxwellian2, potential2):
        for om in [0.4 + 0.9j, -1.2 + 0.3j, 2.0j]:
            a = epsilon_tilde(maxwellian2, E1, om, 0.2, potential2)
            b = epsilon_tilde(maxwellian2, E1, np.conj(om), 0.2, potential2)
            assert abs(complex(a.re, -a.im) - complex(b.re, b.im)) < 1e-10

    def test_large_imaginary_frequency_decay(self, maxwellian2, potential2):
        mags = []
        for eta in [1e1, 1e2, 1e3]:
            e = epsilon_tilde(maxwellian2, E1, 1j * eta, 0.2, potential2)
            mags.append(abs(complex(e.re, e.im) - 1.0))
        assert mags[0] > 10 * mags[1] > 100 * mags[2] / 10
        assert mags[2] < 1e-3

    def test_small_coupling_lower_bound_scan(self, grid2, potential2):
        # |eps_tilde| bounded away from zero over a (k, omega) lattice
        fld = DistributionField.maxwellian(grid2)
        mods = [
            epsilon_tilde(fld, kn * E1, om, 0.3, potential2).abs
            for kn in [0.2, 1.0, 3.0]
            for om in [0.5 + 0.5j, -0.3 + 1.0j, 2.0 + 0.1j, 0.05j]
        ]
        assert min(mods) > 0.45  # recorded scan minimum with margin


class TestScreeningTable:
    def test_table_matches_direct_evaluation(self, maxwellian2, potential2):
        tab = ScreeningTable(maxwellian2, 0.2, potential2)
        rng = np.random.default_rng(5)
        for _ in range(12):
            kn = rng.uniform(0.2, 8.0)
            ang = rng.uniform(0, 2 * np.pi)
            khat = np.array([np.cos(ang), np.sin(ang)])
            v = rng.normal(size=2) * 1.5
            direct = epsilon_hbar(maxwellian2, kn * khat, v, 0.2, potential2)
            a2 = tab.eps_abs2(np.array([kn]), khat[None, :], np.array([khat @ v]))[0]
            assert abs(a2 - direct.abs**2) < 2e-3

    def test_classical_table(self, maxwellian2, potential2):
        tab = ScreeningTable(maxwellian2, 0.0, potential2)
        kn = 1.3
        v = np.array([0.8, -0.4])
        direct = epsilon_classical(maxwellian2, kn * E1, v, potential2)
        a2 = tab.eps_abs2(np.array([kn]), E1[None, :], np.array([v[0]]))[0]
        assert abs(a2 - direct.abs**2) < 2e-3

    def test_on_shell_symmetry_is_exact(self, maxwellian2, potential2):
        # the four velocities of a collision share one |eps|^2 through the
        # (k_hat, y) -> (-k_hat, -y) tie, exactly at table level
        tab = ScreeningTable(maxwellian2, 0.2, potential2)
        rng = np.random.default_rng(9)
        kn = rng.uniform(0.2, 5.0, size=6)
        ang = rng.uniform(0, 2 * np.pi, size=6)
        khat = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        kdv = rng.normal(size=6)
        a = tab.eps_abs2(kn, khat, kdv)
        b = tab.eps_abs2(kn, -khat, -kdv - 0.2 * kn)  # swapped configuration
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)
