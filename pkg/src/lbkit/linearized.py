"""Linearized collision theory near the Maxwellian equilibrium.

Provides the linearized operator and its bilinear companion, the difference
norm built from the same constrained quadrature, the equivalent-norm
cross-check, weighted Sobolev norms, the projection onto the collision
invariants, and the pointwise kernel reductions of the quadratic form
(including the small-separation cutoff machinery).

The collision invariants and the random test states are kept as polynomials
times sqrt(M), so projections and Sobolev norms have exact reference values
and the operator identities that hold pointwise (vanishing four-point
differences on invariants) are exact at the integrand level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .collision import (CollisionEngine, calibrate_jacobian, collision_kernel_B,
                        field_descriptor, _hyperplane_rule, _theta_rule)
from .dielectric import ScreeningTable, epsilon_hbar, wavenumber_cutoff
from .errors import DegeneratePairError, ScreeningSingularError, UnsupportedOrderError
from .fields import (DistributionField, PerturbationState, PolyGaussProfile,
                     VelocityGrid, smooth_step, sqrt_maxwellian)
from .gridops import axis_derivative
from .potential import PotentialModel, fourier_potential

__all__ = [
    "CollisionInvariantBasis",
    "CutoffProfile",
    "delta4",
    "apply_L_hbar",
    "apply_Q_hbar",
    "norm_hbar",
    "quadratic_form_pieces",
    "dissipation_form",
    "norm_equivalent_form",
    "sobolev_norm_r",
    "pi0_project",
    "kernel_K_hbar",
    "kernel_K0",
    "kernel_Ktilde0",
    "kernel_rhoK",
    "perturbation_screening",
    "test_state_ensemble",
]


# ---------------------------------------------------------------------------
# invariants and projections


def invariant_profiles(d: int):
    """Orthonormal collision invariants as polynomial * sqrt(M) profiles."""
    profs = [PolyGaussProfile.monomial(d, (0,) * d, 1.0)]
    for i in range(d):
        alpha = [0] * d
        alpha[i] = 1
        profs.append(PolyGaussProfile.monomial(d, tuple(alpha), 1.0))
    coeffs = {(0,) * d: -d / math.sqrt(2 * d)}
    for i in range(d):
        alpha = [0] * d
        alpha[i] = 2
        coeffs[tuple(alpha)] = 1.0 / math.sqrt(2 * d)
    profs.append(PolyGaussProfile(d, coeffs))
    return profs


class CollisionInvariantBasis:
    """Grid realization of the d + 2 collision invariants.

    One Gram-Schmidt pass against the quadrature inner product brings the
    exactly orthonormal analytic fields to numerically orthonormal grid
    fields (the pass corrects only quadrature-level deviations).
    """

    def __init__(self, grid: VelocityGrid):
        self.grid = grid
        self.profiles = invariant_profiles(grid.d)
        raw = np.stack([p(grid.nodes) for p in self.profiles])
        w = grid.weights
        basis = []
        for vec in raw:
            for b in basis:
                vec = vec - np.sum(w * b * vec) * b
            vec = vec / math.sqrt(np.sum(w * vec**2))
            basis.append(vec)
        self.fields = np.stack(basis)

    @property
    def gram(self) -> np.ndarray:
        return (self.fields * self.grid.weights) @ self.fields.T

    def project_coefficients(self, values: np.ndarray) -> np.ndarray:
        return (self.fields * self.grid.weights) @ np.asarray(values)

    def project(self, values: np.ndarray) -> np.ndarray:
        return self.project_coefficients(values) @ self.fields

    def orthogonal_complement(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) - self.project(values)


def pi0_project(state: PerturbationState, basis: CollisionInvariantBasis = None):
    """Coefficients on the invariant span and the orthogonal remainder."""
    if basis is None:
        basis = CollisionInvariantBasis(state.grid)
    coeffs = basis.project_coefficients(state.values)
    remainder = state.values - coeffs @ basis.fields
    return coeffs, remainder


# ---------------------------------------------------------------------------
# four-point difference and operator applications


def delta4(g: PerturbationState, h: PerturbationState, v1, v2, sigma,
           hbar: float) -> float:
    """Four-point combination g1 h2 + g2 h1 - g1' h2' - g2' h1'."""
    from .collision import sigma_parametrization
    _, v1p, v2p, _ = sigma_parametrization(v1, v2, sigma, hbar)
    pts = np.stack([np.asarray(v1, dtype=float), np.asarray(v2, dtype=float),
                    v1p, v2p])
    gv = g.evaluate(pts)
    hv = h.evaluate(pts)
    return float(gv[0] * hv[1] + gv[1] * hv[0] - gv[2] * hv[3] - gv[3] * hv[2])


def apply_L_hbar(engine: CollisionEngine, state: PerturbationState,
                 out_indices=None) -> np.ndarray:
    """Linearized operator rows; engine must carry the equilibrium screening."""
    fdesc = field_descriptor(state)
    if engine.use_compiled:
        out, _ = engine.compiled_reduce(1, fdesc, scr=engine.screening,
                                        out_idx=out_indices)
        return out
    return _apply_L_reference(engine, state, out_indices)


def _apply_L_reference(engine: CollisionEngine, state: PerturbationState,
                       out_indices=None) -> np.ndarray:
    grid = engine.grid
    if out_indices is None:
        out_indices = range(grid.n_nodes)
    cd = engine.constants.c_d
    out = np.zeros(len(out_indices))
    for j, i1 in enumerate(out_indices):
        v1 = grid.nodes[i1]
        geo = engine.row_geometry(v1)
        ns = geo["sigma"].shape[1]
        g1 = state.evaluate(v1[None, :])[0]
        g2 = state.evaluate(geo["v2"])
        sm1 = float(sqrt_maxwellian(v1[None, :])[0])
        sm2 = sqrt_maxwellian(geo["v2"])
        g1p = state.evaluate(geo["v1p"].reshape(-1, engine.d)).reshape(-1, ns)
        g2p = state.evaluate(geo["v2p"].reshape(-1, engine.d)).reshape(-1, ns)
        sm1p = sqrt_maxwellian(geo["v1p"].reshape(-1, engine.d)).reshape(-1, ns)
        sm2p = sqrt_maxwellian(geo["v2p"].reshape(-1, engine.d)).reshape(-1, ns)
        dd = (g1 * sm2[:, None] + g2[:, None] * sm1 - g1p * sm2p - g2p * sm1p)
        out[j] = cd * np.sum(geo["w"] * dd * sm2[:, None])
    return out


def perturbation_screening(grid: VelocityGrid, h_state: PerturbationState,
                           potential: PotentialModel, hbar: float,
                           n_dirs: int = 16, n_k: int = 16, n_y: int = 161):
    """Additive susceptibility correction table for F_h = M + sqrt(M) h.

    The response is affine in the density, so the full-state screening is the
    equilibrium table plus this (coarser) correction built from sqrt(M) h.
    """
    psi = DistributionField(grid=grid, kind="perturbation",
                            values=grid.sqrt_maxwellian_values() * h_state.values
                            * grid.mask_values())
    return ScreeningTable(psi, hbar, potential, n_dirs=n_dirs, n_k=n_k, n_y=n_y)


def composite_min_abs(base: ScreeningTable, corr: ScreeningTable) -> float:
    """Smallest |eps| of the base-plus-correction screening on the base lattice."""
    vk = fourier_potential(base.potential, base.k_grid)[None, :, None]
    re = base.chi_re.copy()
    im = base.chi_im.copy()
    # resample the correction onto the base lattice direction-by-direction
    ny = base.chi_re.shape[2]
    for m, khat in enumerate(base._half_dirs):
        if khat is None:
            khat = np.zeros(base.d)
            khat[0] = 1.0
        for j, kn in enumerate(base.k_grid):
            kdv = base.y_grid - 0.5 * base.hbar * kn
            c = corr.chi(np.full(ny, kn), np.broadcast_to(khat, (ny, base.d)), kdv)
            re[m, j] += c.real
            im[m, j] += c.imag
    a2 = (1.0 + vk * re) ** 2 + (vk * im) ** 2
    return float(np.sqrt(a2.min()))


def apply_Q_hbar(engine: CollisionEngine, state_g: PerturbationState,
                 state_h: PerturbationState, h_screening=None,
                 out_indices=None) -> np.ndarray:
    """Bilinear collision correction Q(g, h) on the grid nodes.

    h_screening: optional precomputed correction table for F_h (built via
    :func:`perturbation_screening` otherwise).  The equilibrium screening is
    taken from the engine.
    """
    if h_screening is None:
        h_screening = perturbation_screening(engine.grid, state_h,
                                             engine.potential, engine.hbar)
    floor = composite_min_abs(engine.screening, h_screening)
    if floor < ScreeningTable.FLOOR:
        raise ScreeningSingularError(
            f"perturbed screening modulus {floor:.3e} below {ScreeningTable.FLOOR}")
    if engine.use_compiled:
        out, _ = engine.compiled_reduce(
            2, field_descriptor(state_g), gdesc=field_descriptor(state_h),
            scr=engine.screening, scr_b=engine.screening, corr_b=h_screening,
            out_idx=out_indices)
        return out
    return _apply_Q_reference(engine, state_g, state_h, h_screening, out_indices)


def _apply_Q_reference(engine: CollisionEngine, state_g, state_h, h_corr,
                       out_indices=None) -> np.ndarray:
    grid = engine.grid
    if out_indices is None:
        out_indices = range(grid.n_nodes)
    cd = engine.constants.c_d
    out = np.zeros(len(out_indices))
    for j, i1 in enumerate(out_indices):
        v1 = grid.nodes[i1]
        geo = engine.row_geometry(v1)
        ns = geo["sigma"].shape[1]
        flat1 = geo["v1p"].reshape(-1, engine.d)
        flat2 = geo["v2p"].reshape(-1, engine.d)
        g1 = state_g.evaluate(v1[None, :])[0]
        h1 = state_h.evaluate(v1[None, :])[0]
        g2 = state_g.evaluate(geo["v2"])
        h2 = state_h.evaluate(geo["v2"])
        sm1 = float(sqrt_maxwellian(v1[None, :])[0])
        sm2 = sqrt_maxwellian(geo["v2"])
        g1p = state_g.evaluate(flat1).reshape(-1, ns)
        g2p = state_g.evaluate(flat2).reshape(-1, ns)
        h1p = state_h.evaluate(flat1).reshape(-1, ns)
        h2p = state_h.evaluate(flat2).reshape(-1, ns)
        sm1p = sqrt_maxwellian(flat1).reshape(-1, ns)
        sm2p = sqrt_maxwellian(flat2).reshape(-1, ns)
        dd_gh = (g1 * h2[:, None] + g2[:, None] * h1 - g1p * h2p - g2p * h1p)
        dd_gm = (g1 * sm2[:, None] + g2[:, None] * sm1 - g1p * sm2p - g2p * sm1p)
        # w carries 1/|eps_M|^2; rescale pointwise to the perturbed screening
        kdv = geo["khat"] @ v1
        chi_c = h_corr.chi(geo["k_norm"].ravel(),
                           geo["khat"].reshape(-1, engine.d),
                           kdv.ravel()).reshape(geo["k_norm"].shape)
        chi_m = engine.screening.chi(geo["k_norm"].ravel(),
                                     geo["khat"].reshape(-1, engine.d),
                                     kdv.ravel()).reshape(geo["k_norm"].shape)
        vk = np.sqrt(geo["vk2"])
        eps_h2 = np.abs(1.0 + vk * (chi_m + chi_c)) ** 2
        w_base = geo["w"] * geo["eps2"]          # strip the equilibrium screening
        term1 = -np.sum(w_base / eps_h2 * dd_gh * sm2[:, None])
        term2 = np.sum(w_base * (1.0 / geo["eps2"] - 1.0 / eps_h2)
                       * dd_gm * sm2[:, None])
        out[j] = cd * (term1 + term2)
    return out


# ---------------------------------------------------------------------------
# norms and quadratic forms


def quadratic_form_pieces(engine: CollisionEngine, state: PerturbationState) -> dict:
    """Row-resolved pieces of the quadratic form, integrated over the grid.

    Returns norm_sq (difference-norm squared), piece2 (the single-site cross
    term), piece3 (the two-site cross term) and symmetric_square (the
    manifestly nonnegative evaluation of <g, L g>).
    """
    fdesc = field_descriptor(state)
    if engine.use_compiled:
        _, quad = engine.compiled_reduce(3, fdesc, scr=engine.screening)
        w = engine.grid.weights
        return {
            "norm_sq": float(w @ quad[:, 0]),
            "piece2": float(w @ quad[:, 1]),
            "piece3": float(w @ quad[:, 2]),
            "symmetric_square": float(w @ quad[:, 3]),
        }
    return _quadratic_form_reference(engine, state)


def _quadratic_form_reference(engine: CollisionEngine, state: PerturbationState) -> dict:
    grid = engine.grid
    cd = engine.constants.c_d
    acc = np.zeros(4)
    for i1 in range(grid.n_nodes):
        v1 = grid.nodes[i1]
        geo = engine.row_geometry(v1)
        ns = geo["sigma"].shape[1]
        flat1 = geo["v1p"].reshape(-1, engine.d)
        flat2 = geo["v2p"].reshape(-1, engine.d)
        g1 = state.evaluate(v1[None, :])[0]
        g2 = state.evaluate(geo["v2"])
        sm1 = float(sqrt_maxwellian(v1[None, :])[0])
        sm2 = sqrt_maxwellian(geo["v2"])
        g1p = state.evaluate(flat1).reshape(-1, ns)
        g2p = state.evaluate(flat2).reshape(-1, ns)
        sm1p = sqrt_maxwellian(flat1).reshape(-1, ns)
        sm2p = sqrt_maxwellian(flat2).reshape(-1, ns)
        w = geo["w"] * grid.weights[i1]
        dgg = g1 - g1p
        dsm = sm2[:, None] - sm2p
        acc[0] += np.sum(w * (dgg**2 * sm2[:, None] ** 2 + g1**2 * dsm**2))
        acc[1] += np.sum(w * dgg * g1p * sm2[:, None] * dsm)
        a_part = g1 * sm2[:, None] - g1p * sm2p
        b_part = g2[:, None] * sm1 - g2p * sm1p
        acc[2] += 0.5 * np.sum(w * a_part * b_part)
        acc[3] += 0.25 * np.sum(w * (a_part + b_part) ** 2)
    return {"norm_sq": cd * acc[0], "piece2": cd * acc[1],
            "piece3": cd * acc[2], "symmetric_square": cd * acc[3]}


def norm_hbar(engine: CollisionEngine, state: PerturbationState) -> float:
    """Difference norm of the perturbation (square root of the norm piece)."""
    return math.sqrt(max(quadratic_form_pieces(engine, state)["norm_sq"], 0.0))


def dissipation_form(engine: CollisionEngine, state: PerturbationState) -> dict:
    """<g, L g> three ways: decomposition, direct rows, symmetric square."""
    pieces = quadratic_form_pieces(engine, state)
    rows = apply_L_hbar(engine, state)
    direct = float(np.sum(engine.grid.weights * state.evaluate(engine.grid.nodes)
                          * rows))
    decomposition = 0.5 * pieces["norm_sq"] + pieces["piece2"] + pieces["piece3"]
    return {
        "direct": direct,
        "decomposition": decomposition,
        "symmetric_square": pieces["symmetric_square"],
        "norm_sq": pieces["norm_sq"],
    }


def norm_equivalent_form(state: PerturbationState, potential: PotentialModel,
                         alpha: float = 0.5, n_rad: int = 32, n_ang: int = 48) -> float:
    """Independent two-piece norm used to bracket the difference norm.

    First piece: unconstrained wavevector integral of the squared increment
    with the Gaussian angular damping; second piece: weighted L2 mass.
    """
    grid = state.grid
    hbar = state.hbar
    d = grid.d
    k_eff = wavenumber_cutoff(potential)
    t, wt = _hyperplane_rule(k_eff, n_rad)
    vk2 = fourier_potential(potential, t) ** 2
    g_nodes = state.evaluate(grid.nodes)
    w = grid.weights
    total = 0.0
    if d == 2:
        angs = 2.0 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
        khats = np.stack([np.cos(angs), np.sin(angs)], axis=1)
        aw = 2.0 * np.pi / n_ang
    else:
        n_pol = max(n_ang // 4, 8)
        n_azi = n_ang
        tha = np.pi * (np.arange(n_pol) + 0.5) / n_pol
        pha = 2.0 * np.pi * (np.arange(n_azi) + 0.5) / n_azi
        TH, PH = np.meshgrid(tha, pha, indexing="ij")
        khats = np.stack([np.sin(TH) * np.cos(PH), np.sin(TH) * np.sin(PH),
                          np.cos(TH)], axis=-1).reshape(-1, 3)
        aw = None  # folded in below via sin(theta)
        sinth = np.sin(TH).ravel()
    for i, khat in enumerate(khats):
        damp = np.exp(-alpha * (grid.nodes @ khat) ** 2)
        for j, tj in enumerate(t):
            shifted = state.evaluate(grid.nodes + hbar * tj * khat)
            incr2 = (g_nodes - shifted) ** 2
            contrib = np.sum(w * damp * incr2) * wt[j] * vk2[j] * tj ** (d - 2)
            if d == 2:
                total += contrib * aw
            else:
                total += contrib * sinth[i] * (np.pi / n_pol) * (2 * np.pi / n_azi)
    total /= hbar**2
    weight = 1.0 / np.sqrt(1.0 + grid.speed() ** 2)
    total += np.sum(w * weight * g_nodes**2)
    return math.sqrt(total)


def sobolev_norm_r(state: PerturbationState, r: int, method: str = "fd") -> float:
    """Weighted Sobolev norm: sum over orders <= r of the shifted-gradient L2.

    method "fd": 4th-order finite differences on the grid (production path);
    method "exact": polynomial calculus, available for analytic states.
    """
    if r < 0 or r > 6:
        raise UnsupportedOrderError(f"order {r} outside the supported range [0, 6]")
    if method == "exact":
        if not isinstance(state.profile, PolyGaussProfile):
            raise ValueError("exact Sobolev norms need a polynomial state")
        return state.profile.sobolev_norm(r)
    grid = state.grid
    w = grid.weights
    h = grid.h
    vmesh = [grid.to_mesh(grid.nodes[:, ax]) for ax in range(grid.d)]
    layer = [grid.to_mesh(state.values)]
    total = float(np.sum(w * state.values**2))
    for _ in range(r):
        nxt = []
        for mesh in layer:
            for ax in range(grid.d):
                dmesh = axis_derivative(mesh, h, ax) - 0.5 * vmesh[ax] * mesh
                nxt.append(dmesh)
        total += sum(float(np.sum(w * m.ravel() ** 2)) for m in nxt)
        layer = nxt
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# kernel reductions of the quadratic form


@dataclass(frozen=True)
class CutoffProfile:
    """Smooth ramp phi(K |v|): zero near 0, one beyond |v| K >= 1.

    The derivative is supported in [1/3, 2/3] (in the K|v| variable).
    """

    K: float

    def phi(self, x):
        return smooth_step(3.0 * np.asarray(x, dtype=float) - 1.0)

    def dphi(self, x, h: float = 1e-6):
        x = np.asarray(x, dtype=float)
        return (self.phi(x + h) - self.phi(x - h)) / (2.0 * h)

    def phi_of_speed(self, v_norm):
        return self.phi(self.K * np.asarray(v_norm, dtype=float))


def _sqrtm_pair(d, a, b):
    return sqrt_maxwellian(np.atleast_2d(a)) * sqrt_maxwellian(np.atleast_2d(b))


def kernel_K_hbar(v1, v2, hbar: float, potential: PotentialModel,
                  table: ScreeningTable, n_map: int = 48, n_uni: int = 16,
                  n_rad: int = 48) -> float:
    """Two-site kernel of the quadratic form at finite hbar.

    Four constrained wavevector integrals: two on the shifted paraboloids
    (sigma-parametrized) and two on the separating hyperplane.
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    d = v1.shape[0]
    if d != 2:
        raise NotImplementedError("kernel reductions are implemented for d = 2")
    dv = v1 - v2
    rho = float(np.linalg.norm(dv))
    if rho < 1e-10:
        raise DegeneratePairError("coincident velocities")
    rhat = dv / rho
    perp = np.array([-rhat[1], rhat[0]])
    aj, pj = calibrate_jacobian(d)
    jw = aj * hbar**pj * rho ** (d - 2)
    cd = 2.0 / (2.0 * math.pi) ** d
    k_eff = wavenumber_cutoff(potential)

    theta, wth = _theta_rule(np.array([rho]), hbar, k_eff, n_map, n_uni)
    theta, wth = theta[0], wth[0]
    total = 0.0
    sm11 = float(sqrt_maxwellian(v1[None, :])[0] * sqrt_maxwellian(v2[None, :])[0])
    for sgn in (1.0, -1.0):
        # paraboloid k . (v2 - v1 - hbar k) = 0, angles measured from rhat
        sig = (np.cos(theta)[:, None] * rhat[None, :]
               + sgn * np.sin(theta)[:, None] * perp[None, :])
        k = (rho / (2 * hbar)) * (sig - rhat[None, :])
        kn = np.linalg.norm(k, axis=1)
        khat = k / kn[:, None]
        vk2 = fourier_potential(potential, kn) ** 2
        e2 = table.eps_abs2(kn, khat, khat @ v1)
        total += np.sum(wth * jw * vk2 / e2) * sm11
        # mirrored paraboloid k . (v2 - v1 + hbar k) = 0, angles from -rhat
        sig_m = (-np.cos(theta)[:, None] * rhat[None, :]
                 + sgn * np.sin(theta)[:, None] * perp[None, :])
        km = (rho / (2 * hbar)) * (sig_m + rhat[None, :])
        knm = np.linalg.norm(km, axis=1)
        khm = km / knm[:, None]
        vk2m = fourier_potential(potential, knm) ** 2
        e2m = table.eps_abs2(knm, khm, (khm @ v1) - hbar * knm)
        total += np.sum(wth * jw * vk2m / e2m) * sm11

    # hyperplane pieces (plane delta contributes 1/rho)
    t, wt = _hyperplane_rule(k_eff, n_rad)
    for sgn in (1.0, -1.0):
        kvecs = sgn * t[:, None] * perp[None, :]
        kn = t
        khat = np.broadcast_to(sgn * perp, (len(t), 2))
        vk2 = fourier_potential(potential, kn) ** 2
        sm_1pp = sqrt_maxwellian(v1[None, :] - hbar * kvecs)
        sm_2pp = sqrt_maxwellian(v2[None, :] + hbar * kvecs)
        sm1 = float(sqrt_maxwellian(v1[None, :])[0])
        sm2 = float(sqrt_maxwellian(v2[None, :])[0])
        e2_v1pp = table.eps_abs2(kn, khat, khat @ v1 - hbar * kn)
        e2_v1 = table.eps_abs2(kn, khat, khat @ v1)
        total -= np.sum(wt / rho / hbar**2 * vk2
                        * (sm_1pp * sm2 / e2_v1pp + sm1 * sm_2pp / e2_v1))
    return cd * total


def kernel_K0(v1, v2, potential: PotentialModel, table0: ScreeningTable,
              fd_step: float = 1e-3) -> float:
    """Zero-hbar two-site kernel: mixed shifted derivatives of B sqrt(M1 M2).

    The Gaussian factor is differentiated symbolically (it turns the shifted
    gradients into polynomial factors); only B is differenced numerically.
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    d = v1.shape[0]

    def bmat(a, b):
        return collision_kernel_B(None, a, b, potential, table=table0).entries

    b0 = bmat(v1, v2)
    total = 0.0
    for i in range(d):
        e_i = np.zeros(d)
        e_i[i] = fd_step
        d1 = (bmat(v1 + e_i, v2) - bmat(v1 - e_i, v2)) / (2 * fd_step)
        for j in range(d):
            e_j = np.zeros(d)
            e_j[j] = fd_step
            d2 = (bmat(v1, v2 + e_j) - bmat(v1, v2 - e_j)) / (2 * fd_step)
            d1d2 = ((bmat(v1 + e_i, v2 + e_j) - bmat(v1 + e_i, v2 - e_j)
                     - bmat(v1 - e_i, v2 + e_j) + bmat(v1 - e_i, v2 - e_j))
                    / (4 * fd_step**2))
            total += (d1d2[i, j] - v1[i] * d2[i, j] - v2[j] * d1[i, j]
                      + v1[i] * v2[j] * b0[i, j])
    return -total * float(_sqrtm_pair(d, v1, v2)[0])


def kernel_Ktilde0(v1, potential: PotentialModel, table0: ScreeningTable,
                   n_rad: int = 32, n_ang: int = 128, fd_step: float = 2e-3) -> float:
    """Single-site kernel: divergence of the Maxwellian-averaged k (x) k flux."""
    v1 = np.asarray(v1, dtype=float)
    d = v1.shape[0]
    cd = 2.0 / (2.0 * math.pi) ** d
    k_eff = wavenumber_cutoff(potential)
    t, wt = _hyperplane_rule(k_eff, n_rad)
    vk2 = fourier_potential(potential, t) ** 2

    def sigma_mat(v):
        if d == 2:
            angs = 2.0 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
            khats = np.stack([np.cos(angs), np.sin(angs)], axis=1)
            aw = 2.0 * np.pi / n_ang
        else:
            raise NotImplementedError
        out = np.zeros((d, d))
        for kh in khats:
            u = kh @ v
            psi = math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
            e2 = table0.eps_abs2(t, np.broadcast_to(kh, (len(t), d)),
                                 np.full(len(t), u))
            scal = np.sum(wt * t**d * vk2 / e2)
            out += psi * scal * np.outer(kh, kh) * aw
        return out

    div = 0.0
    for i in range(d):
        e_i = np.zeros(d)
        e_i[i] = fd_step
        wp = sigma_mat(v1 + e_i) @ (v1 + e_i)
        wm = sigma_mat(v1 - e_i) @ (v1 - e_i)
        div += (wp[i] - wm[i]) / (2 * fd_step)
    return 0.25 * cd * div


def kernel_rhoK(v_diff, v_mean, cutoff: CutoffProfile,
                potential: PotentialModel, table0: ScreeningTable,
                n_rad: int = 48) -> float:
    """Cutoff-boundary density of the small-separation regularization."""
    v_diff = np.asarray(v_diff, dtype=float)
    v_mean = np.asarray(v_mean, dtype=float)
    d = v_diff.shape[0]
    rho = float(np.linalg.norm(v_diff))
    if rho < 1e-10:
        raise DegeneratePairError("degenerate separation")
    front = cutoff.K * float(cutoff.dphi(cutoff.K * rho)) / rho**2
    if front == 0.0:
        return 0.0
    rhat = v_diff / rho
    k_eff = wavenumber_cutoff(potential)
    t, wt = _hyperplane_rule(k_eff, n_rad)
    vk2 = fourier_potential(potential, t) ** 2
    if d == 2:
        perp = np.array([-rhat[1], rhat[0]])
        acc = 0.0
        for sgn in (1.0, -1.0):
            kh = sgn * perp
            e2 = table0.eps_abs2(t, np.broadcast_to(kh, (len(t), 2)),
                                 np.full(len(t), kh @ v_mean))
            acc += np.sum(wt * t**2 * vk2 / e2)
    else:
        raise NotImplementedError
    return front * acc


# ---------------------------------------------------------------------------
# seeded test states


def test_state_ensemble(grid: VelocityGrid, hbar: float, seed: int = 912,
                        count: int = 32, degree: int = 4,
                        orthogonal: bool = True):
    """Deterministic polynomial-times-sqrt(M) states, invariant-orthogonal."""
    rng = np.random.default_rng(seed)
    inv = invariant_profiles(grid.d)
    states = []
    for _ in range(count):
        prof = PolyGaussProfile.from_seed(grid.d, rng, degree=degree)
        if orthogonal:
            for w in inv:
                prof = prof.plus(w, -prof.inner(w))
        nrm = math.sqrt(prof.inner(prof))
        prof = prof.scaled(1.0 / nrm)
        states.append(PerturbationState.from_profile(grid, prof, hbar))
    return states
