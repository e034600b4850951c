"""Dielectric (screening) functions of the collision kernels.

Three response functions are provided:

* :func:`epsilon_hbar` -- the finite-hbar screening at wavevector k seen by a
  particle at velocity v.  After reduction to the 1-D marginal Psi of the
  density along k-hat it reads, with s = hbar |k| and w = k-hat . v + s,

      eps = 1 + V(k) [ PV int q_s(u) / (w - u) du + i pi q_s(w) ],
      q_s(u) = (Psi(u) - Psi(u - s)) / s,

  the boundary-value orientation being fixed so that eps_hbar -> eps_0 as
  hbar -> 0 and the Maxwellian response is screening (|eps| >= 1 at small
  k . v).  Only |eps|^2 enters the collision kernels, so the orientation is
  invisible there.
* :func:`epsilon_classical` -- the hbar -> 0 limit, with q_0 = Psi'.
* :func:`epsilon_tilde` -- the Laplace-side response at complex frequency,
  holomorphic off the real axis; no principal value is needed there.

Principal values are evaluated by singularity subtraction on a uniform grid
(Simpson weights), which removes the pole exactly for smooth integrands.
:class:`ScreeningTable` precomputes the susceptibility chi with
eps = 1 + V(k) chi(|k|, y) on a (|k|, y) lattice, y = k-hat . v + s/2.  In
the y variable Re chi is even and Im chi is odd, and the table enforces the
symmetry exactly; this is what keeps the discrete collision operators
conservative, because the four velocities of a collision share one |eps|^2
through that symmetry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import SingularWavevectorError
from .fields import DistributionField, Marginal1D, marginal_of_field
from .potential import PotentialModel, fourier_potential

__all__ = [
    "DielectricValue",
    "perpendicular_marginal",
    "epsilon_hbar",
    "epsilon_classical",
    "epsilon_hbar_to_classical_gap",
    "epsilon_tilde",
    "pv_cauchy",
    "pv_cauchy_odd_grid",
    "ScreeningTable",
    "dielectric_scan_rows",
]

K_TINY = 1e-12


@dataclass(frozen=True)
class DielectricValue:
    re: float
    im: float
    kind: str  # "quantum", "classical" or "modified_omega"

    @property
    def abs(self) -> float:
        return math.hypot(self.re, self.im)

    @property
    def complex(self) -> complex:
        return complex(self.re, self.im)


def _simpson_weights(n: int, h: float) -> np.ndarray:
    if n < 3 or n % 2 == 0:
        raise ValueError("need an odd number of nodes >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def pv_cauchy(values: np.ndarray, u: np.ndarray, w) -> np.ndarray:
    """PV integral of values(u) / (w - u) du over the grid span, vectorized in w.

    Uses singularity subtraction

        PV int f(u)/(w-u) du = int (f(u) - f(w))/(w-u) du
                               + f(w) log |(w - u0)/(u1 - w)|

    with Simpson weights on the uniform grid.  f is extended by zero outside
    the span, so the span must cover the support of ``values``.
    """
    w_arr = np.atleast_1d(np.asarray(w, dtype=float))
    u = np.asarray(u, dtype=float)
    values = np.asarray(values, dtype=float)
    n = len(u)
    h = u[1] - u[0]
    if n % 2 == 0:  # Simpson needs an odd count; drop the trailing node
        u = u[:-1]
        values = values[:-1]
        n -= 1
    sw = _simpson_weights(n, h)

    # f(w) and f'(w) by local cubic interpolation of the samples
    from scipy import ndimage
    coeffs = ndimage.spline_filter(values, order=3, mode="constant")
    idx = (w_arr - u[0]) / h
    f_w = ndimage.map_coordinates(coeffs, np.atleast_2d(idx), order=3,
                                  mode="constant", cval=0.0, prefilter=False)
    fp = np.gradient(values, h, edge_order=2)
    if n >= 5:  # 4th-order interior stencil; the pole never sits at the edges
        fp[2:n - 2] = (values[0:n - 4] - 8 * values[1:n - 3]
                       + 8 * values[3:n - 1] - values[4:n]) / (12 * h)
    cp = ndimage.spline_filter(fp, order=3, mode="constant")
    fp_w = ndimage.map_coordinates(cp, np.atleast_2d(idx), order=3,
                                   mode="constant", cval=0.0, prefilter=False)

    # The subtracted integrand is smooth, so evaluate it exactly everywhere;
    # only a node that coincides with the pole needs the limit value -f'(w).
    denom = w_arr[:, None] - u[None, :]
    near = np.abs(denom) < 1e-9 * h
    denom_safe = np.where(near, 1.0, denom)
    integrand = (values[None, :] - f_w[:, None]) / denom_safe
    integrand = np.where(near, -fp_w[:, None], integrand)
    core = integrand @ sw

    log_num = np.abs(w_arr - u[0])
    log_den = np.abs(u[-1] - w_arr)
    log_term = f_w * np.log(np.maximum(log_num, 1e-300) / np.maximum(log_den, 1e-300))
    out = core + log_term
    return out if np.ndim(w) else float(out[0])


def pv_cauchy_odd_grid(fun, w: float, half_width: float = 14.0, n: int = 20000) -> float:
    """Independent PV evaluator: midpoint sum on a grid symmetric about the pole.

    The odd part of 1/(w-u) cancels pairwise on the offset grid (n must be
    even so no node coincides with the pole), so the plain midpoint sum
    converges to the principal value for smooth integrands.
    """
    if n % 2:
        n += 1
    h = 2.0 * half_width / n
    u = w - half_width + (np.arange(n) + 0.5) * h
    return float(np.sum(fun(u) / (w - u)) * h)


def perpendicular_marginal(phi: DistributionField, k_hat) -> Marginal1D:
    """1-D reduction of a field: Psi(u) = integral over the plane k-hat . v = u."""
    return marginal_of_field(phi, k_hat)


def _k_geometry(k):
    k = np.asarray(k, dtype=float)
    k_norm = float(np.linalg.norm(k))
    if k_norm < K_TINY:
        raise SingularWavevectorError(f"|k| = {k_norm} below {K_TINY}")
    return k, k_norm, k / k_norm


_marginal_cache: dict = {}


def _cached_marginal(phi: DistributionField, k_hat) -> Marginal1D:
    key = (id(phi), tuple(np.round(np.asarray(k_hat, dtype=float), 14)))
    m = _marginal_cache.get(key)
    if m is None:
        m = marginal_of_field(phi, k_hat)
        if len(_marginal_cache) > 256:
            _marginal_cache.clear()
        _marginal_cache[key] = m
    return m


def _pv_grid_for(marg: Marginal1D, s: float) -> np.ndarray:
    """Odd-count uniform grid covering the support of u -> Psi(u) - Psi(u - s)."""
    u0 = marg.u[0] - 2 * marg.h
    u1 = marg.u[-1] + s + 2 * marg.h
    n = int(math.ceil((u1 - u0) / marg.h)) + 1
    if n % 2 == 0:
        n += 1
    return np.linspace(u0, u1, n)


def epsilon_hbar(phi: DistributionField, k, v, hbar: float,
                 potential: PotentialModel) -> DielectricValue:
    """Finite-hbar dielectric response at wavevector k and test velocity v."""
    if hbar <= 0:
        raise ValueError("hbar must be positive")
    k, k_norm, k_hat = _k_geometry(k)
    v = np.asarray(v, dtype=float)
    vk = fourier_potential(potential, k_norm)
    marg = _cached_marginal(phi, k_hat)
    s = hbar * k_norm
    w = float(k_hat @ v) + s
    u = _pv_grid_for(marg, s)
    q = marg.diff_quotient(u, s)
    pv = pv_cauchy(q, u, w)
    qw = float(marg.diff_quotient(np.array([w]), s)[0])
    return DielectricValue(re=1.0 + vk * float(pv), im=math.pi * vk * qw, kind="quantum")


def epsilon_classical(phi: DistributionField, k, v,
                      potential: PotentialModel) -> DielectricValue:
    """Zero-hbar dielectric response; the marginal enters through its derivative."""
    k, k_norm, k_hat = _k_geometry(k)
    v = np.asarray(v, dtype=float)
    vk = fourier_potential(potential, k_norm)
    marg = _cached_marginal(phi, k_hat)
    y = float(k_hat @ v)
    u = _pv_grid_for(marg, 0.0)
    dpsi = marg.derivative(u)
    pv = pv_cauchy(dpsi, u, y)
    dy = float(marg.derivative(np.array([y]))[0])
    return DielectricValue(re=1.0 + vk * float(pv), im=math.pi * vk * dy, kind="classical")


def epsilon_hbar_to_classical_gap(phi: DistributionField, k, v, hbar: float,
                                  potential: PotentialModel) -> float:
    """|eps_hbar - eps_0| at a common (k, v) point."""
    eq = epsilon_hbar(phi, k, v, hbar, potential)
    ec = epsilon_classical(phi, k, v, potential)
    return math.hypot(eq.re - ec.re, eq.im - ec.im)


def epsilon_tilde(f0: DistributionField, k, omega: complex, hbar: float,
                  potential: PotentialModel) -> DielectricValue:
    """Laplace-side response 1 + V(k) int q_s(u) / (u - s/2 - omega/s) du.

    Holomorphic for Im omega != 0; the denominator never vanishes so no
    principal value is involved.
    """
    omega = complex(omega)
    if omega.imag == 0.0:
        raise ValueError("epsilon_tilde requires Im omega != 0")
    if hbar <= 0:
        raise ValueError("hbar must be positive")
    k, k_norm, k_hat = _k_geometry(k)
    vk = fourier_potential(potential, k_norm)
    marg = _cached_marginal(f0, k_hat)
    s = hbar * k_norm
    u = _pv_grid_for(marg, s)
    if len(u) % 2 == 0:
        u = u[:-1]
    q = marg.diff_quotient(u, s)
    sw = _simpson_weights(len(u), u[1] - u[0])
    val = np.sum(sw * q / (u - 0.5 * s - omega / s))
    z = 1.0 + vk * val
    return DielectricValue(re=float(z.real), im=float(z.imag), kind="modified_omega")


class ScreeningTable:
    """Susceptibility tables chi(|k|, y) per direction bin, eps = 1 + V chi.

    y = k-hat . v + hbar |k| / 2 is the symmetrized velocity variable.  For
    any field the exact tie chi(-khat)(|k|, -y) = conj(chi(khat)(|k|, y))
    holds, so only half the direction bins are stored and the opposite half
    is served by folding (bin, y) -> (partner bin, -y).  The fold maps the
    four velocity configurations of one collision to a single table entry,
    which keeps the discrete operators conservative through interpolation.
    hbar = 0 produces the classical table (difference quotient -> derivative).

    Isotropic fields need a single marginal and no direction binning.
    """

    FLOOR = 1e-3   # validity floor for the screening modulus

    def __init__(self, field: DistributionField, hbar: float,
                 potential: PotentialModel, n_dirs: int = 64,
                 n_k: int = 40, n_y: int = 481, k_cut: float = None,
                 orientation: str = "kinetic"):
        self.field = field
        self.hbar = float(hbar)
        self.potential = potential
        self.d = field.grid.d
        self.orientation = orientation
        iso = field.is_isotropic()
        if k_cut is None:
            k_cut = wavenumber_cutoff(potential)
        self.k_cut = float(k_cut)

        if iso:
            self._half_dirs = [None]
            self.n_dirs = 1
        elif self.d == 2:
            if n_dirs % 2:
                n_dirs += 1
            self.n_dirs = n_dirs
            angles = 2.0 * np.pi * np.arange(n_dirs // 2) / n_dirs
            self._half_dirs = [np.array([math.cos(a), math.sin(a)]) for a in angles]
        else:
            # polar x azimuth midpoint bins; the stored half is z > 0
            n_pol, n_azi = 8, 16
            self.n_dirs = n_pol * n_azi
            dirs = []
            for i in range(n_pol // 2):
                th = (i + 0.5) * math.pi / n_pol
                for j in range(n_azi):
                    ph = (j + 0.5) * 2.0 * math.pi / n_azi
                    dirs.append(np.array([math.sin(th) * math.cos(ph),
                                          math.sin(th) * math.sin(ph),
                                          math.cos(th)]))
            self._half_dirs = dirs

        umax = field.grid.v_max * math.sqrt(self.d) + 1.0
        self.k_grid = np.concatenate([[0.0], np.geomspace(0.05, self.k_cut, n_k - 1)])
        self.y_max = umax + 0.5 * self.hbar * self.k_cut + 1.0
        if n_y % 2 == 0:
            n_y += 1
        self.y_grid = np.linspace(-self.y_max, self.y_max, n_y)

        nh = len(self._half_dirs)
        self.chi_re = np.empty((nh, len(self.k_grid), n_y))
        self.chi_im = np.empty((nh, len(self.k_grid), n_y))
        for m, khat in enumerate(self._half_dirs):
            if khat is None:
                khat = np.zeros(self.d)
                khat[0] = 1.0
            marg = marginal_of_field(field, khat, u_max=umax)
            for j, kn in enumerate(self.k_grid):
                s = self.hbar * kn
                u0 = marg.u[0] - 2 * marg.h
                u1 = marg.u[-1] + s + 2 * marg.h
                n_u = int(math.ceil((u1 - u0) / marg.h))
                if n_u % 2 == 0:
                    n_u += 1
                u = np.linspace(u0, u1, n_u)
                q = (marg.diff_quotient(u, s) if s > 0 else marg.derivative(u))
                w = self.y_grid + 0.5 * s
                self.chi_re[m, j] = pv_cauchy(q, u, w)
                qq = (marg.diff_quotient(w, s) if s > 0 else marg.derivative(w))
                self.chi_im[m, j] = math.pi * qq
        if orientation == "laplace":
            # Laplace-side boundary values carry the reflected principal part
            self.chi_re = -self.chi_re
        elif orientation != "kinetic":
            raise ValueError(f"unknown orientation {orientation!r}")
        if iso:
            # a single marginal serves every direction, so chi(-y) = conj chi(y)
            # must hold exactly for the collision fold; enforce it on the table
            self.chi_re = 0.5 * (self.chi_re + self.chi_re[:, :, ::-1])
            self.chi_im = 0.5 * (self.chi_im - self.chi_im[:, :, ::-1])
        self._min_abs = None

    def _dir_weights(self, k_hats: np.ndarray):
        """Angular-linear direction pairs: (bins, weights, fold signs)."""
        n = k_hats.shape[0]
        if self.n_dirs == 1:
            z = np.zeros((n, 1), dtype=int)
            return z, np.ones((n, 1)), np.ones((n, 1))
        if self.d == 2:
            ang = np.arctan2(k_hats[:, 1], k_hats[:, 0]) % (2.0 * np.pi)
            a = ang / (2.0 * np.pi / self.n_dirs)
            m0 = np.floor(a).astype(int) % self.n_dirs
            ta = a - np.floor(a)
            bins = np.stack([m0, (m0 + 1) % self.n_dirs], axis=1)
            wts = np.stack([1.0 - ta, ta], axis=1)
        else:
            # nearest stored hemisphere direction (no angular interpolation)
            sign = np.where(k_hats[:, 2] >= 0, 1.0, -1.0)
            kh = k_hats * sign[:, None]
            dirs = np.stack(self._half_dirs)
            m0 = np.argmax(kh @ dirs.T, axis=1)
            bins = np.stack([m0, m0], axis=1)
            half = len(self._half_dirs)
            bins = np.where(sign[:, None] > 0, bins, bins + half)
            wts = np.stack([np.ones(n), np.zeros(n)], axis=1)
        half = len(self._half_dirs)
        signs = np.where(bins < half, 1.0, -1.0)
        bins = np.where(bins < half, bins, bins - half)
        return bins, wts, signs

    def chi(self, k_norms, k_hats, k_dot_v):
        """Interpolated susceptibility chi at (|k|, k-hat, k-hat . v)."""
        k_norms = np.asarray(k_norms, dtype=float)
        k_dot_v = np.asarray(k_dot_v, dtype=float)
        y = k_dot_v + 0.5 * self.hbar * k_norms
        bins, wts, signs = self._dir_weights(np.atleast_2d(k_hats))

        kk = np.clip(k_norms, self.k_grid[0], self.k_grid[-1])
        jk = np.clip(np.searchsorted(self.k_grid, kk) - 1, 0, len(self.k_grid) - 2)
        tk = (kk - self.k_grid[jk]) / (self.k_grid[jk + 1] - self.k_grid[jk])
        dy = self.y_grid[1] - self.y_grid[0]

        out = np.zeros(y.shape, dtype=complex)
        for pick in range(bins.shape[1]):
            m = bins[:, pick]
            sgn = signs[:, pick]
            wa = wts[:, pick]
            yq = y * sgn
            fy = (yq - self.y_grid[0]) / dy
            inside = (fy > 0) & (fy < len(self.y_grid) - 1)
            jy = np.clip(fy.astype(int), 0, len(self.y_grid) - 2)
            ty = np.clip(fy - jy, 0.0, 1.0)

            def gather(tab):
                c00 = tab[m, jk, jy]
                c01 = tab[m, jk, jy + 1]
                c10 = tab[m, jk + 1, jy]
                c11 = tab[m, jk + 1, jy + 1]
                return (c00 * (1 - tk) * (1 - ty) + c01 * (1 - tk) * ty
                        + c10 * tk * (1 - ty) + c11 * tk * ty)

            re = gather(self.chi_re)
            im = gather(self.chi_im) * sgn
            ay = np.maximum(np.abs(yq), 1.0)
            re = np.where(inside, re, -1.0 / ay**2)   # analytic far tail
            im = np.where(inside, im, 0.0)
            out = out + wa * (re + 1j * im)
        return out

    def kernel_args(self):
        """Flat argument pack consumed by the compiled d = 2 kernels."""
        return (1, self.chi_re, self.chi_im, self.k_grid,
                float(self.y_grid[0]), float(self.y_grid[1] - self.y_grid[0]),
                len(self._half_dirs), self.n_dirs)

    def eps_abs2(self, k_norms, k_hats, k_dot_v):
        """|eps|^2 at quadrature points; V(k) is evaluated exactly."""
        k_norms = np.asarray(k_norms, dtype=float)
        vk = fourier_potential(self.potential, np.maximum(k_norms, 0.0))
        c = self.chi(k_norms, k_hats, k_dot_v)
        return (1.0 + vk * c.real) ** 2 + (vk * c.imag) ** 2

    def min_abs(self) -> float:
        """Smallest screening modulus over the whole table (cached)."""
        if self._min_abs is None:
            vk = fourier_potential(self.potential, self.k_grid)[None, :, None]
            a2 = (1.0 + vk * self.chi_re) ** 2 + (vk * self.chi_im) ** 2
            self._min_abs = float(np.sqrt(a2.min()))
        return self._min_abs


def wavenumber_cutoff(potential: PotentialModel, tail: float = 1e-10) -> float:
    """Radius beyond which V(k)^2 contributions are below ``tail``."""
    k = np.geomspace(1.0, 1e4, 200)
    v2 = fourier_potential(potential, k) ** 2
    amp2 = max(fourier_potential(potential, 0.0) ** 2, 1e-300)
    small = np.nonzero(v2 <= tail * amp2)[0]
    if len(small) == 0:
        return 1e4
    return float(k[small[0]])


def dielectric_scan_rows(phi: DistributionField, potential: PotentialModel,
                         hbar_values, k_norms=None, k_dot_vs=None):
    """Scan rows (k_norm, k_dot_v, hbar, re, im, abs); hbar = 0 rows are classical."""
    if k_norms is None:
        k_norms = np.geomspace(0.1, 10.0, 24)
    if k_dot_vs is None:
        k_dot_vs = np.linspace(-4.0, 4.0, 21)
    d = phi.grid.d
    k_hat = np.zeros(d)
    k_hat[0] = 1.0
    rows = []
    for hb in hbar_values:
        for kn in k_norms:
            for kdv in k_dot_vs:
                v = np.zeros(d)
                v[0] = kdv
                if hb == 0:
                    val = epsilon_classical(phi, kn * k_hat, v, potential)
                else:
                    val = epsilon_hbar(phi, kn * k_hat, v, hb, potential)
                rows.append((float(kn), float(kdv), float(hb), val.re, val.im, val.abs))
    return rows
