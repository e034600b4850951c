"""Closed two-equation pair-correlation system on a periodic-box lattice.

The unknowns are the one-particle occupation f(v1) on the velocity lattice
(2 pi hbar / L) Z^d and the pair amplitude g(v1, v2, k) driven by the source
A and the mean-field coupling B at each wavevector k in (2 pi / L) Z^d.
Wavevector slices are uncoupled, so the evolution streams over k: the
kinetic phase (a real multiplier that vanishes on the collision manifold)
is rotated exactly, the bounded B and A parts advance with an explicit
midpoint rule, and each slice deposits its contribution to the occupation
rate.  Opposite wavevectors are tied by the conjugation symmetry

    g(v1, v2, k) = conj g(v1 + hbar k, v2 - hbar k, -k),

so only half of the k lattice is evolved; the pairing also telescopes the
rate sum, making the total occupation mass exactly conserved.

The measure conventions are fixed by the continuum limit (velocity cell
(2 pi hbar / L)^d in every lattice average) and validated by the frozen
dynamics at zero coupling and by mass conservation.

The Laplace-side collision term T(omega, k, v1) is the v2-average of the
resolvent of (K2 + B) applied to the source.  Two evaluation paths are
kept: a diagonally preconditioned fixed point in the pair slice, and a
contour-free composition of the two single-slot resolvents (each closed
form by a rank-one update) integrated over the real split parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ResolventSolveError, ScreeningSingularError
from .potential import PotentialModel, fourier_potential

__all__ = [
    "HierarchyConfig",
    "LatticeState",
    "HierarchyOperators",
    "bump_profile",
    "evolve_hierarchy",
    "epsilon_tilde_lattice",
    "resolvent_L1_apply",
    "resolvent_L2_apply",
    "laplace_T",
    "laplace_T_contour",
    "consistency_at_zero",
]


@dataclass
class HierarchyConfig:
    box_size: float = 16.0
    hbar: float = 1.0
    v_support: float = 2.5       # radius of the initial occupation support
    k_max: float = 3.0
    potential: PotentialModel = None
    d: int = 2

    def __post_init__(self):
        if self.potential is None:
            self.potential = PotentialModel.default(self.d, amplitude=0.5)
        self.h_v = 2.0 * math.pi * self.hbar / self.box_size
        self.h_k = 2.0 * math.pi / self.box_size
        # the box must hold the support plus every reachable hbar k shift
        self.v_max = self.v_support + self.hbar * self.k_max + 2 * self.h_v

    @property
    def cell_v(self) -> float:
        return self.h_v**self.d

    def velocity_axis(self) -> np.ndarray:
        n = int(math.floor(self.v_max / self.h_v))
        return self.h_v * np.arange(-n, n + 1)

    def wavevectors_half(self):
        """Integer k-lattice points in the ball, one per (k, -k) pair."""
        n = int(math.floor(self.k_max / self.h_k))
        out = []
        rng = range(-n, n + 1)
        for mx in rng:
            for my in rng if self.d == 2 else [0]:
                if self.d == 2:
                    m = (mx, my)
                else:
                    m = (mx,)
                k2 = self.h_k**2 * sum(c * c for c in m)
                if k2 == 0.0 or k2 > self.k_max**2:
                    continue
                if m[0] < 0 or (m[0] == 0 and m[-1] < 0):
                    continue
                out.append(np.array(m, dtype=int))
        return out


class bump_profile:
    """Smooth compactly supported radial profile (1 - r^2 / R^2)^3_+."""

    isotropic = True

    def __init__(self, v_support: float, amplitude: float = 1.0):
        self.v_support = float(v_support)
        self.amplitude = float(amplitude)

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r2 = np.sum(pts**2, axis=-1) / self.v_support**2
        return self.amplitude * np.where(r2 < 1.0, (1.0 - r2) ** 3, 0.0)


@dataclass
class LatticeState:
    """Occupation mesh plus (optionally retained) pair slices."""

    config: HierarchyConfig
    f: np.ndarray                      # (n, n) mesh, d = 2
    t: float = 0.0
    pair_slices: dict = dc_field(default_factory=dict)   # int tuple -> mesh

    def mass(self) -> float:
        return float(self.config.cell_v * self.f.sum())

    def energy(self) -> float:
        ax = self.config.velocity_axis()
        e = 0.5 * (ax[:, None] ** 2 + ax[None, :] ** 2)
        return float(self.config.cell_v * np.sum(e * self.f))


def initial_state(cfg: HierarchyConfig, profile=None, normalize: bool = True) -> LatticeState:
    ax = cfg.velocity_axis()
    if profile is None:
        profile = bump_profile(cfg.v_support)
    vx, vy = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([vx.ravel(), vy.ravel()], axis=1)
    f = profile(pts).reshape(len(ax), len(ax))
    if normalize:
        z = cfg.cell_v * f.sum()
        if z <= 0:
            raise ValueError("initial profile has no mass on the lattice")
        f = f / z
    return LatticeState(config=cfg, f=f)


def _shift_mesh(mesh: np.ndarray, m, fill: float = 0.0) -> np.ndarray:
    """mesh evaluated at v + h_v * m (zero filled outside the box)."""
    out = np.full_like(mesh, fill)
    n0, n1 = mesh.shape[:2]
    sx, sy = int(m[0]), int(m[1])
    x_lo_d, x_hi_d = max(0, -sx), min(n0, n0 - sx)
    y_lo_d, y_hi_d = max(0, -sy), min(n1, n1 - sy)
    if x_lo_d >= x_hi_d or y_lo_d >= y_hi_d:
        return out
    out[x_lo_d:x_hi_d, y_lo_d:y_hi_d] = mesh[x_lo_d + sx:x_hi_d + sx,
                                             y_lo_d + sy:y_hi_d + sy]
    return out


class HierarchyOperators:
    """Per-wavevector pieces of the pair dynamics at integer wavevector m."""

    def __init__(self, cfg: HierarchyConfig, f0: np.ndarray, m):
        self.cfg = cfg
        self.m = np.asarray(m, dtype=int)
        ax = cfg.velocity_axis()
        self.k = cfg.h_k * self.m.astype(float)
        self.vk = fourier_potential(cfg.potential, float(np.linalg.norm(self.k)))
        hb = cfg.hbar
        kdotv = self.k[0] * ax[:, None] + self.k[1] * ax[None, :]
        k2 = float(self.k @ self.k)
        # difference energies: D_minus(v) = E(v) - E(v + hbar k)
        self.d_minus = -hb * kdotv - 0.5 * hb**2 * k2
        self.d_plus = hb * kdotv - 0.5 * hb**2 * k2     # E(v) - E(v - hbar k)
        # kinetic multiplier on the pair slice
        self.k2_mult = self.d_minus[:, :, None, None] + self.d_plus[None, None, :, :]
        f0p = _shift_mesh(f0, self.m)        # f0(v + hbar k)
        f0m = _shift_mesh(f0, -self.m)       # f0(v - hbar k)
        self.delta_minus_f0 = f0 - f0p       # f0(v) - f0(v + hbar k)
        self.delta_plus_f0 = f0 - f0m        # f0(v) - f0(v - hbar k)
        self.source = self.vk * (f0[:, :, None, None] * f0[None, None, :, :]
                                 - f0p[:, :, None, None] * f0m[None, None, :, :])

    def k2_vanishes_on_manifold(self) -> float:
        """max |K2| over the exact collision manifold (lattice points)."""
        cfg = self.cfg
        ax = cfg.velocity_axis()
        kdv = self.k[0] * ax[:, None] + self.k[1] * ax[None, :]
        target = kdv[None, None, :, :] - kdv[:, :, None, None] - cfg.hbar * float(self.k @ self.k)
        on = np.abs(target) < 1e-12
        if not np.any(on):
            return 0.0
        return float(np.abs(self.k2_mult[on]).max())

    def apply_B(self, g: np.ndarray) -> np.ndarray:
        cell = self.cfg.cell_v
        s1 = g.sum(axis=(0, 1)) * cell          # over v1
        s2 = g.sum(axis=(2, 3)) * cell          # over v2
        return self.vk * (self.delta_minus_f0[:, :, None, None] * s1[None, None, :, :]
                          + self.delta_plus_f0[None, None, :, :] * s2[:, :, None, None])

    def rate_mesh(self, g: np.ndarray) -> np.ndarray:
        """Contribution of the (k, -k) pair to the occupation rate N df/dt."""
        cfg = self.cfg
        c = (2.0 * math.pi * cfg.hbar) ** cfg.d / cfg.box_size ** (2 * cfg.d)
        s_k = np.sum(g.imag, axis=(2, 3))       # over v2
        shift = _shift_mesh(s_k, -self.m)       # s_k(v1 - hbar k)
        return -(4.0 * c / cfg.hbar) * self.vk * (s_k - shift)


def evolve_hierarchy(cfg: HierarchyConfig, dt: float, t_final: float,
                     profile=None, keep_pair: bool = False,
                     cfl_limit: float = 0.5):
    """Stream the pair slices over half the k lattice and integrate the rate.

    Returns (state, result) where result carries the step times, the
    occupation-rate meshes (summed over wavevectors) and the f history.
    """
    state = initial_state(cfg, profile=profile)
    f0 = state.f
    n_steps = int(round(t_final / dt))
    times = dt * np.arange(n_steps + 1)
    rates = np.zeros((n_steps + 1,) + f0.shape)
    norm_b = (4.0 / (2.0 * math.pi) ** cfg.d
              * fourier_potential(cfg.potential, 0.0) * cfg.cell_v * abs(f0).sum())
    if dt * norm_b / cfg.hbar > cfl_limit:
        raise ResolventSolveError(
            f"time step violates the coupling bound: dt*|B|/hbar = "
            f"{dt * norm_b / cfg.hbar:.3f} > {cfl_limit}")
    for m in cfg.wavevectors_half():
        ops = HierarchyOperators(cfg, f0, m)
        g = np.zeros(ops.k2_mult.shape, dtype=complex)
        rates[0] += ops.rate_mesh(g)
        half_phase = np.exp(-0.5j * dt * ops.k2_mult / cfg.hbar)
        for n in range(n_steps):
            g = half_phase * g
            k1 = 1j / cfg.hbar * (ops.source - ops.apply_B(g))
            gm = g + 0.5 * dt * k1
            k2 = 1j / cfg.hbar * (ops.source - ops.apply_B(gm))
            g = half_phase * (g + dt * k2)
            rates[n + 1] += ops.rate_mesh(g)
        if keep_pair:
            state.pair_slices[tuple(int(x) for x in m)] = g
    # occupation history by trapezoid accumulation of the rate (N = 1)
    f_hist = np.zeros_like(rates)
    f_hist[0] = f0
    for n in range(n_steps):
        f_hist[n + 1] = f_hist[n] + 0.5 * dt * (rates[n] + rates[n + 1])
    state.f = f_hist[-1]
    state.t = float(t_final)
    return state, {"times": times, "rates": rates, "f_history": f_hist}


def evolve_single_slice(cfg: HierarchyConfig, f0: np.ndarray, m, dt: float,
                        n_steps: int) -> np.ndarray:
    """Evolve one stored pair slice (used by the symmetry checks)."""
    ops = HierarchyOperators(cfg, f0, m)
    g = np.zeros(ops.k2_mult.shape, dtype=complex)
    half_phase = np.exp(-0.5j * dt * ops.k2_mult / cfg.hbar)
    for _ in range(n_steps):
        g = half_phase * g
        k1 = 1j / cfg.hbar * (ops.source - ops.apply_B(g))
        gm = g + 0.5 * dt * k1
        k2 = 1j / cfg.hbar * (ops.source - ops.apply_B(gm))
        g = half_phase * (g + dt * k2)
    return g


# ---------------------------------------------------------------------------
# Laplace side


def epsilon_tilde_lattice(cfg: HierarchyConfig, f0: np.ndarray, m,
                          omega: complex) -> complex:
    """Lattice response 1 + V(k) <delta_k f0 / (delta_k E - omega)>."""
    ops = HierarchyOperators(cfg, f0, np.asarray(m, dtype=int))
    val = cfg.cell_v * np.sum(ops.delta_plus_f0 / (ops.d_plus - omega))
    return 1.0 + ops.vk * complex(val)


def resolvent_L1_apply(cfg: HierarchyConfig, f0: np.ndarray, m, omega: complex,
                       h: np.ndarray) -> np.ndarray:
    """(L1 - omega)^{-1} h: diagonal division plus the rank-one correction.

    L1 acts on the first (v1) slot of the pair slice.
    """
    if omega.imag == 0.0:
        raise ValueError("resolvents need Im omega != 0")
    ops = HierarchyOperators(cfg, f0, np.asarray(m, dtype=int))
    eps = epsilon_tilde_lattice(cfg, f0, -np.asarray(m, dtype=int), omega)
    if abs(eps) < 1e-6:
        raise ScreeningSingularError(f"lattice response modulus {abs(eps):.2e}")
    denom = ops.d_minus - omega
    if h.ndim == 2:
        base = h / denom
        avg = cfg.cell_v * base.sum()
        return base - (ops.vk / eps) * (ops.delta_minus_f0 / denom) * avg
    base = h / denom[:, :, None, None]
    avg = cfg.cell_v * base.sum(axis=(0, 1))
    return base - (ops.vk / eps) * (ops.delta_minus_f0 / denom)[:, :, None, None] \
        * avg[None, None, :, :]


def resolvent_L2_apply(cfg: HierarchyConfig, f0: np.ndarray, m, omega: complex,
                       h: np.ndarray) -> np.ndarray:
    """(L2 - omega)^{-1} h acting on the second (v2) slot."""
    if omega.imag == 0.0:
        raise ValueError("resolvents need Im omega != 0")
    ops = HierarchyOperators(cfg, f0, np.asarray(m, dtype=int))
    eps = epsilon_tilde_lattice(cfg, f0, np.asarray(m, dtype=int), omega)
    if abs(eps) < 1e-6:
        raise ScreeningSingularError(f"lattice response modulus {abs(eps):.2e}")
    denom = ops.d_plus - omega
    if h.ndim == 2:
        base = h / denom
        avg = cfg.cell_v * base.sum()
        return base - (ops.vk / eps) * (ops.delta_plus_f0 / denom) * avg
    base = h / denom[None, None, :, :]
    avg = cfg.cell_v * base.sum(axis=(2, 3))
    return base - (ops.vk / eps) * (ops.delta_plus_f0 / denom)[None, None, :, :] \
        * avg[:, :, None, None]


def apply_L1(cfg, ops, h):
    avg = cfg.cell_v * h.sum(axis=(0, 1))
    return (ops.d_minus[:, :, None, None] * h
            + ops.vk * ops.delta_minus_f0[:, :, None, None] * avg[None, None, :, :])


def apply_L2(cfg, ops, h):
    avg = cfg.cell_v * h.sum(axis=(2, 3))
    return (ops.d_plus[None, None, :, :] * h
            + ops.vk * ops.delta_plus_f0[None, None, :, :] * avg[:, :, None, None])


def laplace_T(cfg: HierarchyConfig, f0: np.ndarray, m, omega: complex,
              tol: float = 1e-11, max_iter: int = 800):
    """T(omega, k, v1): v2-average of ((K2 + B) - omega)^{-1} A, per v1 mesh.

    Diagonally preconditioned fixed point using the rank structure of B;
    raises ResolventSolveError with the residual when it stalls.
    """
    if omega.imag == 0.0:
        raise ValueError("laplace_T needs Im omega != 0")
    ops = HierarchyOperators(cfg, f0, np.asarray(m, dtype=int))
    rdiag = 1.0 / (ops.k2_mult - omega)
    x = rdiag * ops.source
    res_prev = None
    for it in range(max_iter):
        bx = ops.apply_B(x)
        x_new = rdiag * (ops.source - bx)
        res = np.max(np.abs(x_new - x))
        x = x_new
        scale = max(np.max(np.abs(x)), 1e-300)
        if res / scale < tol:
            break
        if res_prev is not None and res > 2.0 * res_prev and it > 10:
            raise ResolventSolveError(
                "fixed point diverging", residual=float(res / scale))
        res_prev = res
    else:
        raise ResolventSolveError(
            f"no convergence in {max_iter} iterations",
            residual=float(res / scale))
    t_mesh = (ops.vk / (2.0 * math.pi) ** cfg.d) * cfg.cell_v * x.sum(axis=(2, 3))
    return t_mesh, x


def laplace_T_contour(cfg: HierarchyConfig, f0: np.ndarray, m, omega: complex,
                      n_beta: int = 256) -> np.ndarray:
    """Alternative path: compose the two closed-form resolvents and integrate
    over the real split parameter (the commuting-resolvent identity)."""
    if omega.imag == 0.0:
        raise ValueError("laplace_T needs Im omega != 0")
    m = np.asarray(m, dtype=int)
    ops = HierarchyOperators(cfg, f0, m)
    gx, gw = leggauss(n_beta)
    # map (-1, 1) -> R through beta = tan(pi x / 2)
    beta = np.tan(0.5 * math.pi * gx)
    wbeta = gw * 0.5 * math.pi / np.cos(0.5 * math.pi * gx) ** 2
    acc = np.zeros(ops.source.shape[:2], dtype=complex)
    for b, wb in zip(beta, wbeta):
        y = resolvent_L1_apply(cfg, f0, m, b + 0.5 * omega, ops.source)
        z = resolvent_L2_apply(cfg, f0, m, -b + 0.5 * omega, y)
        acc += wb * cfg.cell_v * z.sum(axis=(2, 3))
    return (ops.vk / (2.0 * math.pi) ** cfg.d) * acc / (2.0j * math.pi)


# ---------------------------------------------------------------------------
# consistency with the kinetic collision rate


def _normalized_continuum_field(cfg: HierarchyConfig, profile):
    """Unit-mass continuum field carrying the lattice initial profile."""
    from .fields import DistributionField, VelocityGrid

    grid = VelocityGrid.regular(cfg.d, 48, cfg.v_support + 1.0)
    raw = DistributionField.from_profile(grid, profile, kind="density")
    z = raw.mass()

    class _Norm:
        isotropic = getattr(profile, "isotropic", False)

        def __call__(self, p):
            return profile(p) / z

    prof = _Norm()
    return DistributionField(grid=grid, kind="density",
                             values=prof(grid.nodes), profile=prof), prof


def zero_frequency_limit(cfg: HierarchyConfig, profile, m, v1) -> complex:
    """Closed-form limit of (T(omega,k,v1) - T(omega,-k,v1')) / (2 pi i).

    Plane-average of the gain-loss bracket at fixed wavevector, screened by
    the continuum boundary response; the bracket is evaluated by the
    collision module's plane quadrature.
    """
    from .collision import delta_shell_bracket_average
    from .dielectric import ScreeningTable

    potential = cfg.potential
    k = cfg.h_k * np.asarray(m, dtype=float)
    kn = float(np.linalg.norm(k))
    vk = fourier_potential(potential, kn)
    fld, _ = _normalized_continuum_field(cfg, profile)
    v1 = np.asarray(v1, dtype=float)
    bracket = delta_shell_bracket_average(fld, v1, k, cfg.hbar,
                                          span=cfg.v_support + 0.5)
    tab = ScreeningTable(fld, cfg.hbar, potential, orientation="laplace",
                         k_cut=max(2 * cfg.k_max, 4.0))
    eps2 = float(tab.eps_abs2(np.array([kn]), (k / kn)[None, :],
                              np.array([k @ v1 / kn]))[0])
    return 2.0j * math.pi * vk**2 / (2.0 * math.pi) ** cfg.d \
        * bracket / eps2 / cfg.hbar


def consistency_at_zero(cfg: HierarchyConfig, dt: float, tau: float,
                        t_weight_final: float = 6.0, profile=None,
                        psi_center=(0.4, 0.0), psi_width: float = 0.8,
                        rate_reference=None):
    """Weak-form comparison of the lattice occupation rate with the kinetic rate.

    lhs: int exp(-t) <psi, N d/dt f(tau t)> dt from the evolved lattice;
    rhs: <psi, Q(f0)> with the screened kinetic rate on the continuum
    (same exponential time weight, which integrates to one).
    Returns (lhs, rhs, gap).
    """
    if profile is None:
        profile = bump_profile(cfg.v_support)
    t_final = tau * t_weight_final
    state, result = evolve_hierarchy(cfg, dt, t_final, profile=profile)
    ax = cfg.velocity_axis()
    vx, vy = np.meshgrid(ax, ax, indexing="ij")
    psi = np.exp(-((vx - psi_center[0]) ** 2 + (vy - psi_center[1]) ** 2)
                 / psi_width**2)
    times = result["times"]
    paired = cfg.cell_v * np.einsum("ij,tij->t", psi, result["rates"])
    weight = np.exp(-times / tau) / tau
    lhs = float(np.trapezoid(paired * weight * tau, times / tau))

    if rate_reference is None:
        rate_reference = kinetic_rate_on_lattice(cfg, profile)
    rhs = float(cfg.cell_v * np.sum(psi * rate_reference))
    return {"lhs": lhs, "rhs": rhs, "gap": abs(lhs - rhs)}


def kinetic_rate_on_lattice(cfg: HierarchyConfig, profile,
                            n_k_rad: int = 32, n_k_ang: int = 48,
                            n_t: int = 128) -> np.ndarray:
    """Screened kinetic collision rate of the initial profile at the lattice
    velocities, with continuum wavevector quadrature cut at the lattice ball.

    The screening is the continuum boundary response at the collision
    frequency: the large-box limit of the pair dynamics' effective screening.
    """
    from .dielectric import ScreeningTable

    ax = cfg.velocity_axis()
    vx, vy = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([vx.ravel(), vy.ravel()], axis=1)
    raw = profile(pts).reshape(len(ax), len(ax))
    fld, prof_norm = _normalized_continuum_field(cfg, profile)
    tab = ScreeningTable(fld, cfg.hbar, cfg.potential, orientation="laplace",
                         k_cut=max(2 * cfg.k_max, 4.0))

    gx, gw = leggauss(n_k_rad)
    kr = 0.5 * cfg.k_max * (gx + 1.0)
    wr = 0.5 * cfg.k_max * gw
    angs = 2.0 * math.pi * (np.arange(n_k_ang) + 0.5) / n_k_ang
    khats = np.stack([np.cos(angs), np.sin(angs)], axis=1)
    cd = 2.0 / (2.0 * math.pi) ** cfg.d
    vk2 = fourier_potential(cfg.potential, kr) ** 2
    span = cfg.v_support + 0.5
    tg, tw = leggauss(n_t)
    tg = span * tg
    tw = span * tw

    out = np.zeros(raw.shape)
    interior = [idx for idx in np.argwhere(raw > 0)
                if math.hypot(ax[idx[0]], ax[idx[1]]) <= cfg.v_support + 1e-9]
    for (i, j) in interior:
        v1 = np.array([ax[i], ax[j]])
        acc = 0.0
        for khat in khats:
            perp = np.array([-khat[1], khat[0]])
            # plane integral at every radial node in one batch
            u0 = khat @ v1 + cfg.hbar * kr                     # (nr,)
            base = (u0[:, None, None] * khat[None, None, :]
                    + tg[None, :, None] * perp[None, None, :])  # (nr, nt, 2)
            kvecs = kr[:, None] * khat[None, :]
            v2m = base - cfg.hbar * kvecs[:, None, :]
            f_v2 = prof_norm(base.reshape(-1, 2)).reshape(len(kr), n_t)
            f_v2m = prof_norm(v2m.reshape(-1, 2)).reshape(len(kr), n_t)
            f_v1p = prof_norm(v1[None, :] + cfg.hbar * kvecs)
            f_v1 = prof_norm(v1[None, :])[0]
            br = (f_v2m * f_v1p[:, None] - f_v1 * f_v2) @ tw / kr
            eps2 = tab.eps_abs2(kr, np.broadcast_to(khat, (len(kr), 2)),
                                np.full(len(kr), khat @ v1))
            acc += (2 * math.pi / n_k_ang) * np.sum(wr * kr * vk2 * br / eps2)
        out[i, j] = cd / cfg.hbar**2 * acc
    return out
