"""Compiled (numba) inner loops for the d = 2 quadratures.

Everything here mirrors the generic NumPy implementations; the test suite
cross-checks the two paths.  Fields enter as tagged descriptors so the
kernels can evaluate analytic profiles exactly:

    kind 0  Gaussian mixture      A1 = weights, A2 = centers (flat), meta unused
    kind 1  poly * sqrt(M)        A1 = coefficients, A2 = exponent pairs (flat)
    kind 2  cubic B-spline grid   A1 = prefiltered coefficients (flat),
                                  meta = (axis origin, spacing, nodes per axis)

Screening tables enter as susceptibility arrays chi(|k|, y) per direction
bin plus an optional additive correction table; |eps|^2 is reconstructed
with the exact potential value.  Reductions are sequential within a row, so
results do not depend on the thread count.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

TWO_PI = 2.0 * math.pi
SIN45 = math.sin(math.pi / 4.0)


# ---------------------------------------------------------------------------
# devices


@njit(cache=True, inline="always")
def _bspline_w(t):
    """Cubic B-spline basis weights for fractional offset t in [0, 1)."""
    t2 = t * t
    t3 = t2 * t
    w0 = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0
    w1 = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0
    w2 = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0
    w3 = t3 / 6.0
    return w0, w1, w2, w3


@njit(cache=True, inline="always")
def _field2(kind, a1, a2, meta, x, y):
    if kind == 0:
        m = a1.shape[0]
        s = 0.0
        for i in range(m):
            dx = x - a2[2 * i]
            dy = y - a2[2 * i + 1]
            s += a1[i] * math.exp(-0.5 * (dx * dx + dy * dy))
        return s / TWO_PI
    if kind == 1:
        q = a1.shape[0]
        s = 0.0
        for i in range(q):
            term = a1[i]
            ax = int(a2[2 * i])
            ay = int(a2[2 * i + 1])
            for _ in range(ax):
                term *= x
            for _ in range(ay):
                term *= y
            s += term
        return s * math.exp(-0.25 * (x * x + y * y)) / math.sqrt(TWO_PI)
    # cubic B-spline on the node lattice, zero outside
    a0 = meta[0]
    h = meta[1]
    n = int(meta[2])
    u = (x - a0) / h
    v = (y - a0) / h
    if u < -2.0 or u > n + 1.0 or v < -2.0 or v > n + 1.0:
        return 0.0
    iu = int(math.floor(u))
    iv = int(math.floor(v))
    wu = _bspline_w(u - iu)
    wv = _bspline_w(v - iv)
    s = 0.0
    for a in range(4):
        ia = iu - 1 + a
        if ia < 0 or ia >= n:
            continue
        wua = wu[a]
        base = ia * n
        for b in range(4):
            ib = iv - 1 + b
            if ib < 0 or ib >= n:
                continue
            s += wua * wv[b] * a1[base + ib]
    return s


@njit(cache=True, inline="always")
def _sqrtm2(x, y):
    return math.exp(-0.25 * (x * x + y * y)) / math.sqrt(TWO_PI)


@njit(cache=True, inline="always")
def _pot(pkind, ps, pamp, ptab, pdlog, k):
    if pkind == 0:
        return pamp * (1.0 + k) ** (-0.5 * ps)
    # sampled on a uniform log1p grid
    x = math.log1p(k) / pdlog
    n = ptab.shape[0]
    i = int(x)
    if i >= n - 1:
        return ptab[n - 1]
    t = x - i
    return ptab[i] * (1.0 - t) + ptab[i + 1] * t


@njit(cache=True, inline="always")
def _chi_bilin(chi_re, chi_im, m, lo, tk, jy, ty, ysign):
    c00 = chi_re[m, lo, jy]
    c01 = chi_re[m, lo, jy + 1]
    c10 = chi_re[m, lo + 1, jy]
    c11 = chi_re[m, lo + 1, jy + 1]
    re = (c00 * (1 - tk) * (1 - ty) + c01 * (1 - tk) * ty
          + c10 * tk * (1 - ty) + c11 * tk * ty)
    d00 = chi_im[m, lo, jy]
    d01 = chi_im[m, lo, jy + 1]
    d10 = chi_im[m, lo + 1, jy]
    d11 = chi_im[m, lo + 1, jy + 1]
    im = (d00 * (1 - tk) * (1 - ty) + d01 * (1 - tk) * ty
          + d10 * tk * (1 - ty) + d11 * tk * ty)
    return re, ysign * im


@njit(cache=True, inline="always")
def _chi_lookup(chi_re, chi_im, k_grid, y0, dy, nhalf, ndirs, hbar,
                kn, khx, khy, kdv):
    """chi at (|k|, k-hat, y): linear in angle, bilinear in (|k|, y).

    Opposite directions are served by the exact fold (bin + ndirs/2, y) ->
    (bin, -y) with conjugation, so collision-symmetric configurations hit
    identical table entries.
    """
    y = kdv + 0.5 * hbar * kn
    nk = k_grid.shape[0]
    ny = chi_re.shape[2]
    kk = kn
    if kk > k_grid[nk - 1]:
        kk = k_grid[nk - 1]
    lo, hi = 0, nk - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if k_grid[mid] <= kk:
            lo = mid
        else:
            hi = mid
    tk = (kk - k_grid[lo]) / (k_grid[lo + 1] - k_grid[lo])

    if nhalf <= 1:
        fy = (y - y0) / dy
        if fy <= 0.0 or fy >= ny - 1:
            ay = abs(y)
            if ay < 1.0:
                ay = 1.0
            return -1.0 / (ay * ay), 0.0
        jy = int(fy)
        return _chi_bilin(chi_re, chi_im, 0, lo, tk, jy, fy - jy, 1.0)

    ang = math.atan2(khy, khx)
    if ang < 0.0:
        ang += TWO_PI
    a = ang / (TWO_PI / ndirs)
    m0 = int(math.floor(a)) % ndirs
    ta = a - math.floor(a)
    re = 0.0
    im = 0.0
    for pick in range(2):
        m = (m0 + pick) % ndirs
        wa = ta if pick == 1 else 1.0 - ta
        yq = y
        ysign = 1.0
        if m >= nhalf:
            m -= nhalf
            yq = -y
            ysign = -1.0
        fy = (yq - y0) / dy
        if fy <= 0.0 or fy >= ny - 1:
            ay = abs(yq)
            if ay < 1.0:
                ay = 1.0
            re += wa * (-1.0 / (ay * ay))
        else:
            jy = int(fy)
            r1, i1 = _chi_bilin(chi_re, chi_im, m, lo, tk, jy, fy - jy, ysign)
            re += wa * r1
            im += wa * i1
    return re, im


@njit(cache=True, inline="always")
def _inv_eps2(scr_on, chi_re, chi_im, k_grid, y0, dy, nhalf, ndirs, hbar,
              cor_on, cor_re, cor_im, cor_kg, cor_y0, cor_dy, cor_nhalf, cor_ndirs,
              vk, kn, khx, khy, kdv):
    if scr_on == 0:
        return 1.0
    re, im = _chi_lookup(chi_re, chi_im, k_grid, y0, dy, nhalf, ndirs, hbar,
                         kn, khx, khy, kdv)
    if cor_on != 0:
        re2, im2 = _chi_lookup(cor_re, cor_im, cor_kg, cor_y0, cor_dy,
                               cor_nhalf, cor_ndirs, hbar, kn, khx, khy, kdv)
        re += re2
        im += im2
    er = 1.0 + vk * re
    ei = vk * im
    return 1.0 / (er * er + ei * ei)


# ---------------------------------------------------------------------------
# the sigma-parametrized triple quadrature
#
# All kernels share the same control flow: for each output node, loop over
# partner samples and angular nodes (mapped |k|-space Gauss-Legendre front
# part plus a uniform back part, both mirror images), build the collision
# geometry, the combined weight, and accumulate the operator-specific
# integrand supplied through `mode`:
#     0: nonlinear rate         out += w * (phi(v2') phi(v1') - phi(v1) phi(v2))
#     1: linearized apply       out += w * dd(g sqrtM) * sqrtM2
#     2: bilinear apply         two-term screened combination of g and h
#     3: quadratic forms        accumulate the decomposition pieces
#
# Partner samples combine the velocity grid (weights damped to zero inside a
# small disc around the output node) with a polar rule on that disc: the
# integrand direction content turns over one cell near the diagonal, where
# the grid cannot resolve it, so the disc is integrated in polar coordinates
# where it is smooth.  The two pieces overlap through a smooth partition of
# unity.


@njit(cache=True, inline="always")
def _blend(rho, rc1, rc2):
    """Gaussian-tail taper 0 -> 1 across [rc1, rc2]: the Fourier tail of an
    erf profile is Gaussian, so the midpoint rule sees no aliasing from it."""
    sigma = (rc2 - rc1) / 6.0
    return 0.5 * (1.0 + math.erf((rho - rc1) / (math.sqrt(2.0) * sigma)))


@njit(cache=True)
def _pair_term(mode, v1x, v1y, f1, g1, sm1, v2x, v2y, wv2,
               hbar, aj, pj, k_eff, glx, glw, n_uni,
               pkind, ps, pamp, ptab, pdlog,
               scr_on, chi_re, chi_im, k_grid, y0, dy, nhalf, ndirs,
               cor_on, cor_re, cor_im, cor_kg, cor_y0, cor_dy,
               cor_nhalf, cor_ndirs,
               scrB_on, chiB_re, chiB_im, k_gridB, y0B, dyB, nhalfB, ndirsB,
               corB_on, corB_re, corB_im, corB_kg, corB_y0, corB_dy,
               corB_nhalf, corB_ndirs,
               fk, fa1, fa2, fmeta, gk, ga1, ga2, gmeta, accum):
    dx = v1x - v2x
    dy_ = v1y - v2y
    rho2 = dx * dx + dy_ * dy_
    if rho2 < 1e-20:
        return
    n_map = glx.shape[0]
    rho = math.sqrt(rho2)
    rhx = dx / rho
    rhy = dy_ / rho
    f2 = _field2(fk, fa1, fa2, fmeta, v2x, v2y)
    g2 = _field2(gk, ga1, ga2, gmeta, v2x, v2y) if mode == 2 else 0.0
    sm2 = _sqrtm2(v2x, v2y)
    midx = 0.5 * (v1x + v2x)
    midy = 0.5 * (v1y + v2y)
    jw = aj * hbar**pj  # rho^(d-2) = 1 in d = 2
    kap_cap = rho / hbar * SIN45
    kap_eff = kap_cap if kap_cap < k_eff else k_eff
    beta = math.log1p(kap_eff)
    if beta > 6.0:
        beta = 6.0
    elif beta < 1e-4:
        beta = 1e-4
    den = math.expm1(beta)
    for j in range(n_map + n_uni):
        if j < n_map:
            xi = 0.5 * (glx[j] + 1.0)
            gmap = math.expm1(beta * xi) / den
            dgdxi = beta * math.exp(beta * xi) / den
            kap = kap_eff * gmap
            ratio = hbar * kap / rho
            if ratio > SIN45:
                ratio = SIN45
            theta = 2.0 * math.asin(ratio)
            wth = (0.5 * glw[j] * kap_eff * dgdxi * (2.0 * hbar / rho)
                   / math.sqrt(1.0 - ratio * ratio))
        else:
            theta = 0.5 * math.pi * (1.0 + (j - n_map + 0.5) / n_uni)
            wth = 0.5 * math.pi / n_uni
        ct = math.cos(theta)
        st = math.sin(theta)
        kn = (rho / hbar) * math.sin(0.5 * theta)
        vk = _pot(pkind, ps, pamp, ptab, pdlog, kn)
        vk2 = vk * vk
        for s_i in range(2):
            sgn = 1.0 if s_i == 0 else -1.0
            sx = ct * rhx - sgn * st * rhy
            sy = ct * rhy + sgn * st * rhx
            kx = (rho / (2.0 * hbar)) * (sx - rhx)
            ky = (rho / (2.0 * hbar)) * (sy - rhy)
            khx = kx / kn
            khy = ky / kn
            kdv = khx * v1x + khy * v1y
            ie2 = _inv_eps2(scr_on, chi_re, chi_im, k_grid, y0, dy,
                            nhalf, ndirs, hbar,
                            cor_on, cor_re, cor_im, cor_kg, cor_y0,
                            cor_dy, cor_nhalf, cor_ndirs,
                            vk, kn, khx, khy, kdv)
            v1px = midx + 0.5 * rho * sx
            v1py = midy + 0.5 * rho * sy
            v2px = midx - 0.5 * rho * sx
            v2py = midy - 0.5 * rho * sy
            wbase = wv2 * wth * jw * vk2
            w = wbase * ie2
            if mode == 0:
                p1p = _field2(fk, fa1, fa2, fmeta, v1px, v1py)
                p2p = _field2(fk, fa1, fa2, fmeta, v2px, v2py)
                accum[0] += w * (p2p * p1p - f1 * f2)
            elif mode == 1:
                g1p = _field2(fk, fa1, fa2, fmeta, v1px, v1py)
                g2p = _field2(fk, fa1, fa2, fmeta, v2px, v2py)
                sm1p = _sqrtm2(v1px, v1py)
                sm2p = _sqrtm2(v2px, v2py)
                dd = f1 * sm2 + f2 * sm1 - g1p * sm2p - g2p * sm1p
                accum[0] += w * dd * sm2
            elif mode == 2:
                ie2b = _inv_eps2(scrB_on, chiB_re, chiB_im, k_gridB,
                                 y0B, dyB, nhalfB, ndirsB, hbar,
                                 corB_on, corB_re, corB_im, corB_kg,
                                 corB_y0, corB_dy, corB_nhalf,
                                 corB_ndirs, vk, kn, khx, khy, kdv)
                f1p = _field2(fk, fa1, fa2, fmeta, v1px, v1py)
                f2p = _field2(fk, fa1, fa2, fmeta, v2px, v2py)
                g1p = _field2(gk, ga1, ga2, gmeta, v1px, v1py)
                g2p = _field2(gk, ga1, ga2, gmeta, v2px, v2py)
                sm1p = _sqrtm2(v1px, v1py)
                sm2p = _sqrtm2(v2px, v2py)
                dd_gh = f1 * g2 + f2 * g1 - f1p * g2p - f2p * g1p
                dd_gm = f1 * sm2 + f2 * sm1 - f1p * sm2p - f2p * sm1p
                accum[0] += wbase * sm2 * (-dd_gh * ie2b + dd_gm * (ie2 - ie2b))
            else:
                g1p = _field2(fk, fa1, fa2, fmeta, v1px, v1py)
                g2p = _field2(fk, fa1, fa2, fmeta, v2px, v2py)
                sm1p = _sqrtm2(v1px, v1py)
                sm2p = _sqrtm2(v2px, v2py)
                dgg = f1 - g1p
                dsm = sm2 - sm2p
                accum[1] += w * (dgg * dgg * sm2 * sm2 + f1 * f1 * dsm * dsm)
                accum[2] += w * dgg * g1p * sm2 * dsm
                a_part = f1 * sm2 - g1p * sm2p
                b_part = f2 * sm1 - g2p * sm1p
                accum[3] += 0.5 * w * a_part * b_part
                tot = f1 * sm2 + f2 * sm1 - g1p * sm2p - g2p * sm1p
                accum[4] += 0.25 * w * tot * tot


@njit(cache=True, parallel=True)
def sigma_reduce_2d(mode, axis_nodes, weights, nodes, out_idx,
                    hbar, cd, aj, pj, k_eff, glx, glw, n_uni, pair_cut2,
                    nf_rc1, nf_rc2, nf_glx, nf_glw, nf_ang,
                    pkind, ps, pamp, ptab, pdlog,
                    scr_on, chi_re, chi_im, k_grid, y0, dy, nhalf, ndirs,
                    cor_on, cor_re, cor_im, cor_kg, cor_y0, cor_dy,
                    cor_nhalf, cor_ndirs,
                    scrB_on, chiB_re, chiB_im, k_gridB, y0B, dyB, nhalfB, ndirsB,
                    corB_on, corB_re, corB_im, corB_kg, corB_y0, corB_dy,
                    corB_nhalf, corB_ndirs,
                    fk, fa1, fa2, fmeta, gk, ga1, ga2, gmeta,
                    out, quad_out):
    n2 = nodes.shape[0]
    nrows = out_idx.shape[0]
    n_nf_rad = nf_glx.shape[0]
    for r in prange(nrows):
        i1 = out_idx[r]
        v1x = nodes[i1, 0]
        v1y = nodes[i1, 1]
        f1 = _field2(fk, fa1, fa2, fmeta, v1x, v1y)
        g1 = _field2(gk, ga1, ga2, gmeta, v1x, v1y) if mode == 2 else 0.0
        sm1 = _sqrtm2(v1x, v1y)
        e1 = v1x * v1x + v1y * v1y
        accum = np.zeros(5)
        for i2 in range(n2):
            v2x = nodes[i2, 0]
            v2y = nodes[i2, 1]
            e2 = v2x * v2x + v2y * v2y
            if e1 + e2 > pair_cut2:
                continue
            ddx = v1x - v2x
            ddy = v1y - v2y
            rho = math.sqrt(ddx * ddx + ddy * ddy)
            wv2 = weights[i2]
            if rho < nf_rc2:
                # partition of unity with the polar disc rule
                wv2 *= _blend(rho, nf_rc1, nf_rc2)
                if wv2 < 1e-300:
                    continue
            _pair_term(mode, v1x, v1y, f1, g1, sm1, v2x, v2y, wv2,
                       hbar, aj, pj, k_eff, glx, glw, n_uni,
                       pkind, ps, pamp, ptab, pdlog,
                       scr_on, chi_re, chi_im, k_grid, y0, dy, nhalf, ndirs,
                       cor_on, cor_re, cor_im, cor_kg, cor_y0, cor_dy,
                       cor_nhalf, cor_ndirs,
                       scrB_on, chiB_re, chiB_im, k_gridB, y0B, dyB, nhalfB,
                       ndirsB, corB_on, corB_re, corB_im, corB_kg, corB_y0,
                       corB_dy, corB_nhalf, corB_ndirs,
                       fk, fa1, fa2, fmeta, gk, ga1, ga2, gmeta, accum)
        # polar near field on the disc rho < nf_rc2 around the output node
        if True:
            for jr in range(n_nf_rad):
                rho = 0.5 * nf_rc2 * (nf_glx[jr] + 1.0)
                wrad = 0.5 * nf_rc2 * nf_glw[jr]
                eta = 1.0 - _blend(rho, nf_rc1, nf_rc2)
                if eta < 1e-300:
                    continue
                for ja in range(nf_ang):
                    phi = TWO_PI * (ja + 0.5) / nf_ang
                    v2x = v1x - rho * math.cos(phi)
                    v2y = v1y - rho * math.sin(phi)
                    e2 = v2x * v2x + v2y * v2y
                    if e1 + e2 > pair_cut2:
                        continue
                    wv2 = eta * wrad * rho * TWO_PI / nf_ang
                    _pair_term(mode, v1x, v1y, f1, g1, sm1, v2x, v2y, wv2,
                               hbar, aj, pj, k_eff, glx, glw, n_uni,
                               pkind, ps, pamp, ptab, pdlog,
                               scr_on, chi_re, chi_im, k_grid, y0, dy,
                               nhalf, ndirs,
                               cor_on, cor_re, cor_im, cor_kg, cor_y0, cor_dy,
                               cor_nhalf, cor_ndirs,
                               scrB_on, chiB_re, chiB_im, k_gridB, y0B, dyB,
                               nhalfB, ndirsB, corB_on, corB_re, corB_im,
                               corB_kg, corB_y0, corB_dy, corB_nhalf,
                               corB_ndirs,
                               fk, fa1, fa2, fmeta, gk, ga1, ga2, gmeta, accum)
        if mode == 3:
            quad_out[r, 0] = cd * accum[1]
            quad_out[r, 1] = cd * accum[2]
            quad_out[r, 2] = cd * accum[3]
            quad_out[r, 3] = cd * accum[4]
        else:
            out[r] = cd * accum[0]


@njit(cache=True, parallel=True)
def classical_pair_scalars_2d(nodes, v1s, trad, wtrad, vk2rad,
                              scr_on, chi_re, chi_im, k_grid, y0, dy,
                              nhalf, ndirs,
                              cor_on, cor_re, cor_im, cor_kg, cor_y0, cor_dy,
                              cor_nhalf, cor_ndirs,
                              pkind, ps, pamp, ptab, pdlog, out):
    """b(v1, v2): B(v1, v2) = b * nhat (x) nhat on the plane k . (v1-v2) = 0.

    The 1/rho plane-delta factor and c_d are left to the caller.
    """
    n1 = v1s.shape[0]
    n2 = nodes.shape[0]
    nt = trad.shape[0]
    for r in prange(n1):
        v1x = v1s[r, 0]
        v1y = v1s[r, 1]
        for i2 in range(n2):
            dx = v1x - nodes[i2, 0]
            dy_ = v1y - nodes[i2, 1]
            rho2 = dx * dx + dy_ * dy_
            if rho2 < 1e-20:
                out[r, i2] = 0.0
                continue
            rho = math.sqrt(rho2)
            nhx = -dy_ / rho
            nhy = dx / rho
            s = 0.0
            kdv = nhx * v1x + nhy * v1y
            for it in range(nt):
                t = trad[it]
                ie_p = _inv_eps2(scr_on, chi_re, chi_im, k_grid, y0, dy,
                                 nhalf, ndirs, 0.0,
                                 cor_on, cor_re, cor_im, cor_kg, cor_y0,
                                 cor_dy, cor_nhalf, cor_ndirs,
                                 _pot(pkind, ps, pamp, ptab, pdlog, t),
                                 t, nhx, nhy, kdv)
                ie_m = _inv_eps2(scr_on, chi_re, chi_im, k_grid, y0, dy,
                                 nhalf, ndirs, 0.0,
                                 cor_on, cor_re, cor_im, cor_kg, cor_y0,
                                 cor_dy, cor_nhalf, cor_ndirs,
                                 _pot(pkind, ps, pamp, ptab, pdlog, t),
                                 t, -nhx, -nhy, -kdv)
                s += wtrad[it] * t * t * vk2rad[it] * (ie_p + ie_m)
            out[r, i2] = s / rho
