"""Velocity-space discretization, distribution fields and analytic profiles.

The whole toolkit works on a uniform, origin-symmetric tensor grid over the
box [-v_max, v_max]^d with midpoint weights.  Midpoint sums of rapidly
decaying smooth integrands on such grids are spectrally accurate, which is
what makes the tight conservation tolerances reachable at desk scale.

Fields come in two flavours:

* analytic (a :class:`Profile` is attached): evaluated exactly anywhere,
  which keeps collision invariants exact at the integrand level;
* grid-valued: evaluated off the nodes by cubic B-spline interpolation of
  the mask-damped values, extended by zero outside the box.

The smooth radial mask kills interpolation ringing near the truncation
boundary; it is applied only to grid-valued fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from itertools import product
from typing import Callable

import numpy as np
from scipy import ndimage

__all__ = [
    "VelocityGrid",
    "DistributionField",
    "PerturbationState",
    "GaussianMixtureProfile",
    "PolyGaussProfile",
    "Marginal1D",
    "maxwellian",
    "smooth_step",
    "marginal_of_field",
]

MASK_BAND = 1.0          # width of the mask transition band
MASK_STOP = 0.5          # mask vanishes for |v| > v_max - MASK_STOP


def smooth_step(x):
    """C-infinity ramp: 0 for x <= 0, 1 for x >= 1, monotone in between."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    hi = x >= 1.0
    out[hi] = 1.0
    mid = (x > 0.0) & ~hi
    if np.any(mid):
        xm = x[mid]
        a = np.exp(-1.0 / xm)
        b = np.exp(-1.0 / (1.0 - xm))
        out[mid] = a / (a + b)
    return out


def maxwellian(points):
    """Unit-mass Gaussian equilibrium (2*pi)^(-d/2) exp(-|v|^2/2)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[-1]
    return (2.0 * np.pi) ** (-d / 2.0) * np.exp(-0.5 * np.sum(points**2, axis=-1))


def sqrt_maxwellian(points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[-1]
    return (2.0 * np.pi) ** (-d / 4.0) * np.exp(-0.25 * np.sum(points**2, axis=-1))


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform symmetric tensor grid on [-v_max, v_max]^d with midpoint weights."""

    d: int
    nodes_per_axis: int
    v_max: float
    axis: np.ndarray = dc_field(repr=False, compare=False, default=None)
    nodes: np.ndarray = dc_field(repr=False, compare=False, default=None)
    weights: np.ndarray = dc_field(repr=False, compare=False, default=None)

    @classmethod
    def regular(cls, d: int = 2, nodes_per_axis: int = 48, v_max: float = 6.0) -> "VelocityGrid":
        if d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {d}")
        if nodes_per_axis < 4:
            raise ValueError("nodes_per_axis must be at least 4")
        h = 2.0 * v_max / nodes_per_axis
        axis = (np.arange(nodes_per_axis) - (nodes_per_axis - 1) / 2.0) * h
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        weights = np.full(nodes.shape[0], h**d)
        return cls(d=d, nodes_per_axis=nodes_per_axis, v_max=float(v_max),
                   axis=axis, nodes=nodes, weights=weights)

    @property
    def h(self) -> float:
        return float(self.axis[1] - self.axis[0])

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def shape(self):
        return (self.nodes_per_axis,) * self.d

    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.nodes, axis=-1)

    def maxwellian_values(self) -> np.ndarray:
        return maxwellian(self.nodes)

    def sqrt_maxwellian_values(self) -> np.ndarray:
        return sqrt_maxwellian(self.nodes)

    def mask_values(self) -> np.ndarray:
        """Smooth radial damping, = 1 inside, 0 for |v| > v_max - MASK_STOP."""
        r = self.speed()
        return smooth_step((self.v_max - MASK_STOP - r) / MASK_BAND + 1.0)

    def to_mesh(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.shape)

    def interpolator(self, values: np.ndarray, masked: bool = True) -> Callable:
        """Cubic-spline interpolant of (optionally mask-damped) node values.

        Points outside the box evaluate to zero.
        """
        vals = np.asarray(values, dtype=float)
        if masked:
            vals = vals * self.mask_values()
        mesh = self.to_mesh(vals)
        coeffs = ndimage.spline_filter(mesh, order=3, mode="constant")
        a0 = self.axis[0]
        h = self.h

        def _eval(points):
            pts = np.atleast_2d(np.asarray(points, dtype=float))
            idx = (pts - a0) / h
            out = ndimage.map_coordinates(coeffs, idx.T, order=3,
                                          mode="constant", cval=0.0,
                                          prefilter=False)
            return out

        return _eval

    def node_index(self, point) -> int:
        """Index of the grid node closest to ``point``."""
        pt = np.asarray(point, dtype=float)
        ii = np.clip(np.rint((pt - self.axis[0]) / self.h).astype(int),
                     0, self.nodes_per_axis - 1)
        flat = 0
        for c in ii:
            flat = flat * self.nodes_per_axis + int(c)
        return flat


class GaussianMixtureProfile:
    """Analytic density: sum of unit-covariance Gaussians with given centers.

    Covers the Maxwellian (single centered component), shifted Maxwellians
    and Maxwellian-plus-bump states used throughout the test batteries.
    All marginals along a unit vector are closed-form 1-D Gaussian mixtures.
    """

    def __init__(self, weights, centers):
        self.weights = np.atleast_1d(np.asarray(weights, dtype=float))
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        if self.weights.shape[0] != self.centers.shape[0]:
            raise ValueError("one weight per center required")
        self.d = self.centers.shape[1]

    @classmethod
    def maxwellian(cls, d: int) -> "GaussianMixtureProfile":
        return cls([1.0], [np.zeros(d)])

    @classmethod
    def shifted(cls, shift) -> "GaussianMixtureProfile":
        shift = np.asarray(shift, dtype=float)
        return cls([1.0], [shift])

    @classmethod
    def bi_maxwellian(cls, shift, fraction: float = 0.5) -> "GaussianMixtureProfile":
        shift = np.asarray(shift, dtype=float)
        return cls([1.0 - fraction, fraction], [-shift, shift])

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        norm = (2.0 * np.pi) ** (-self.d / 2.0)
        out = np.zeros(pts.shape[0])
        for w, c in zip(self.weights, self.centers):
            out += w * np.exp(-0.5 * np.sum((pts - c) ** 2, axis=-1))
        return norm * out

    def gradient(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        norm = (2.0 * np.pi) ** (-self.d / 2.0)
        out = np.zeros_like(pts)
        for w, c in zip(self.weights, self.centers):
            dv = pts - c
            out += (-w * np.exp(-0.5 * np.sum(dv**2, axis=-1)))[:, None] * dv
        return norm * out

    def marginal_along(self, k_hat) -> Callable:
        """Exact 1-D marginal u -> integral of the density over k_hat-perp."""
        k_hat = np.asarray(k_hat, dtype=float)
        shifts = self.centers @ k_hat
        wts = self.weights

        def _psi(u):
            u = np.asarray(u, dtype=float)
            out = np.zeros_like(u)
            for w, s in zip(wts, shifts):
                out += w * np.exp(-0.5 * (u - s) ** 2)
            return out / math.sqrt(2.0 * np.pi)

        return _psi


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def _gauss_moment(alpha) -> float:
    """E[v^alpha] for v ~ N(0, I)."""
    out = 1.0
    for n in alpha:
        if n % 2 == 1:
            return 0.0
        out *= _double_factorial(n - 1)
    return out


class PolyGaussProfile:
    """Perturbation of the form p(v) * sqrt(M)(v) with polynomial p.

    The class keeps p symbolically (multi-index -> coefficient), which makes
    the shifted gradient (d/dv_i - v_i/2) and all L2 inner products exact:
    (d/dv_i - v_i/2)(p sqrt M) = (dp/dv_i - v_i p) sqrt M and
    <p sqrt M, q sqrt M> = E[p q] under the standard normal law.
    """

    def __init__(self, d: int, coeffs: dict):
        self.d = d
        self.coeffs = {tuple(k): float(v) for k, v in coeffs.items() if v != 0.0}

    @classmethod
    def from_seed(cls, d: int, rng, degree: int = 4) -> "PolyGaussProfile":
        coeffs = {}
        for alpha in product(range(degree + 1), repeat=d):
            if sum(alpha) <= degree:
                coeffs[alpha] = rng.normal()
        return cls(d, coeffs)

    @classmethod
    def monomial(cls, d: int, alpha, coeff: float = 1.0) -> "PolyGaussProfile":
        return cls(d, {tuple(alpha): coeff})

    def poly_eval(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(pts.shape[0])
        for alpha, c in self.coeffs.items():
            term = np.full(pts.shape[0], c)
            for i, n in enumerate(alpha):
                if n:
                    term = term * pts[:, i] ** n
            out += term
        return out

    def __call__(self, points):
        return self.poly_eval(points) * sqrt_maxwellian(points)

    def shifted_gradient(self, i: int) -> "PolyGaussProfile":
        """Profile of (d/dv_i - v_i/2) applied to this field."""
        out: dict = {}
        for alpha, c in self.coeffs.items():
            if alpha[i] > 0:
                da = list(alpha)
                da[i] -= 1
                key = tuple(da)
                out[key] = out.get(key, 0.0) + c * alpha[i]
            ua = list(alpha)
            ua[i] += 1
            key = tuple(ua)
            out[key] = out.get(key, 0.0) - c
        return PolyGaussProfile(self.d, out)

    def inner(self, other: "PolyGaussProfile") -> float:
        """Exact L2 inner product of the two fields."""
        out = 0.0
        for a, ca in self.coeffs.items():
            for b, cb in other.coeffs.items():
                m = tuple(x + y for x, y in zip(a, b))
                out += ca * cb * _gauss_moment(m)
        return out

    def scaled(self, factor: float) -> "PolyGaussProfile":
        return PolyGaussProfile(self.d, {a: c * factor for a, c in self.coeffs.items()})

    def plus(self, other: "PolyGaussProfile", factor: float = 1.0) -> "PolyGaussProfile":
        out = dict(self.coeffs)
        for a, c in other.coeffs.items():
            out[a] = out.get(a, 0.0) + factor * c
        return PolyGaussProfile(self.d, out)

    def sobolev_norm(self, r: int) -> float:
        """Exact sum over 0 <= r' <= r of |(shifted gradient)^r' applied field|^2."""
        total = 0.0
        layer = [self]
        total += self.inner(self)
        for _ in range(r):
            nxt = []
            for p in layer:
                for i in range(self.d):
                    nxt.append(p.shifted_gradient(i))
            total += sum(p.inner(p) for p in nxt)
            layer = nxt
        return math.sqrt(total)


@dataclass
class DistributionField:
    """Density or perturbation sampled on a grid, optionally with an analytic profile."""

    grid: VelocityGrid
    kind: str                      # "density" or "perturbation"
    values: np.ndarray
    profile: object = None

    @classmethod
    def from_profile(cls, grid: VelocityGrid, profile, kind: str = "density") -> "DistributionField":
        vals = np.asarray(profile(grid.nodes), dtype=float)
        return cls(grid=grid, kind=kind, values=vals, profile=profile)

    @classmethod
    def maxwellian(cls, grid: VelocityGrid) -> "DistributionField":
        return cls.from_profile(grid, GaussianMixtureProfile.maxwellian(grid.d))

    def __post_init__(self):
        if self.kind not in ("density", "perturbation"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        self._interp = None

    def validate(self, atol: float = 1e-8) -> None:
        if self.kind == "density":
            if np.any(self.values < -1e-12):
                raise ValueError("density field has negative node values")
            mass = float(np.sum(self.grid.weights * self.values))
            if abs(mass - 1.0) > atol:
                raise ValueError(f"density mass {mass} deviates from 1 by more than {atol}")

    def mass(self) -> float:
        return float(np.sum(self.grid.weights * self.values))

    def evaluate(self, points) -> np.ndarray:
        """Field value at arbitrary points (exact for analytic profiles)."""
        if self.profile is not None:
            return np.asarray(self.profile(points), dtype=float)
        if self._interp is None:
            self._interp = self.grid.interpolator(self.values, masked=True)
        return self._interp(points)

    def is_isotropic(self) -> bool:
        prof = self.profile
        if isinstance(prof, GaussianMixtureProfile):
            return prof.centers.shape[0] == 1 and not np.any(prof.centers)
        return bool(getattr(prof, "isotropic", False))


@dataclass
class PerturbationState:
    """Fluctuation g with associated full state M + sqrt(M) g."""

    grid: VelocityGrid
    values: np.ndarray
    hbar: float
    profile: object = None

    @classmethod
    def from_profile(cls, grid: VelocityGrid, profile, hbar: float) -> "PerturbationState":
        vals = np.asarray(profile(grid.nodes), dtype=float)
        return cls(grid=grid, values=vals, hbar=float(hbar), profile=profile)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self._interp = None

    def evaluate(self, points) -> np.ndarray:
        if self.profile is not None:
            return np.asarray(self.profile(points), dtype=float)
        if self._interp is None:
            self._interp = self.grid.interpolator(self.values, masked=True)
        return self._interp(points)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.grid.weights * self.values**2)))

    def full_state_values(self) -> np.ndarray:
        g = self.values * self.grid.mask_values()
        return self.grid.maxwellian_values() + self.grid.sqrt_maxwellian_values() * g

    def check_positive(self, floor: float = -1e-10) -> None:
        fmin = float(np.min(self.full_state_values()))
        if fmin < floor:
            raise ValueError(f"full state dips to {fmin}, below the {floor} floor")


@dataclass
class Marginal1D:
    """1-D profile Psi(u) of a field along a unit direction, on a uniform u-grid."""

    u: np.ndarray
    values: np.ndarray
    analytic: Callable = None

    @property
    def h(self) -> float:
        return float(self.u[1] - self.u[0])

    def __call__(self, uq):
        uq = np.asarray(uq, dtype=float)
        if self.analytic is not None:
            return self.analytic(uq)
        # cubic interpolation via the global spline of the sampled values
        if not hasattr(self, "_coeffs"):
            self._coeffs = ndimage.spline_filter(self.values, order=3, mode="constant")
        idx = (uq - self.u[0]) / self.h
        return ndimage.map_coordinates(self._coeffs, np.atleast_2d(idx), order=3,
                                       mode="constant", cval=0.0, prefilter=False)

    def derivative(self, uq):
        uq = np.asarray(uq, dtype=float)
        if self.analytic is not None:
            eps = 1e-5
            return (self.analytic(uq + eps) - self.analytic(uq - eps)) / (2 * eps)
        # 4th-order central difference of the sampled marginal, then interp
        if not hasattr(self, "_dcoeffs"):
            dv = np.gradient(self.values, self.h, edge_order=2)
            n = len(self.values)
            d4 = np.zeros_like(self.values)
            d4[2:n - 2] = (self.values[0:n - 4] - 8 * self.values[1:n - 3]
                           + 8 * self.values[3:n - 1] - self.values[4:n]) / (12 * self.h)
            d4[:2] = dv[:2]
            d4[-2:] = dv[-2:]
            self._dcoeffs = ndimage.spline_filter(d4, order=3, mode="constant")
        idx = (uq - self.u[0]) / self.h
        return ndimage.map_coordinates(self._dcoeffs, np.atleast_2d(idx), order=3,
                                       mode="constant", cval=0.0, prefilter=False)

    def diff_quotient(self, uq, s: float):
        """(Psi(u) - Psi(u - s)) / s, switching to the derivative for tiny s."""
        uq = np.asarray(uq, dtype=float)
        if s < 0.25 * self.h:
            return self.derivative(uq - 0.5 * s)
        return (self(uq) - self(uq - s)) / s

    def mass(self) -> float:
        return float(np.trapezoid(self.values, self.u))


def marginal_of_field(field, k_hat, u_max: float = None, h_u: float = None) -> Marginal1D:
    """Marginal Psi(u) = integral of the field over the hyperplane k_hat . v = u.

    Analytic Gaussian-mixture profiles produce exact marginals; grid fields
    are reduced by transverse line (d=2) or plane (d=3) midpoint sums of the
    interpolated field.
    """
    grid = field.grid
    k_hat = np.asarray(k_hat, dtype=float)
    nrm = np.linalg.norm(k_hat)
    if abs(nrm - 1.0) > 1e-10:
        raise ValueError("k_hat must be a unit vector")
    d = grid.d
    if u_max is None:
        u_max = grid.v_max * math.sqrt(d) + 1.0
    if h_u is None:
        h_u = grid.v_max / (4.0 * grid.nodes_per_axis)
    n_u = int(round(2 * u_max / h_u)) + 1
    u = np.linspace(-u_max, u_max, n_u)

    prof = getattr(field, "profile", None)
    if isinstance(prof, GaussianMixtureProfile):
        psi = prof.marginal_along(k_hat)
        return Marginal1D(u=u, values=psi(u), analytic=psi)

    # numeric transverse reduction of the (masked) interpolated field
    if d == 2:
        perp = np.array([-k_hat[1], k_hat[0]])
        t = np.arange(-u_max, u_max + grid.h / 2, grid.h / 2)
        pts = u[:, None, None] * k_hat[None, None, :] + t[None, :, None] * perp[None, None, :]
        vals = field.evaluate(pts.reshape(-1, 2)).reshape(len(u), len(t))
        psi_vals = np.trapezoid(vals, t, axis=1)
    else:
        e1 = np.array([1.0, 0.0, 0.0])
        if abs(k_hat @ e1) > 0.9:
            e1 = np.array([0.0, 1.0, 0.0])
        p1 = e1 - (e1 @ k_hat) * k_hat
        p1 /= np.linalg.norm(p1)
        p2 = np.cross(k_hat, p1)
        t = np.arange(-u_max, u_max + grid.h / 2, grid.h / 2)
        tt1, tt2 = np.meshgrid(t, t, indexing="ij")
        psi_vals = np.empty(len(u))
        for i, ui in enumerate(u):
            pts = (ui * k_hat[None, :] + tt1.ravel()[:, None] * p1[None, :]
                   + tt2.ravel()[:, None] * p2[None, :])
            vals = field.evaluate(pts).reshape(len(t), len(t))
            psi_vals[i] = np.trapezoid(np.trapezoid(vals, t, axis=1), t)
    return Marginal1D(u=u, values=psi_vals)
