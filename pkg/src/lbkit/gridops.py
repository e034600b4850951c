"""Finite-difference operators on mesh-shaped velocity fields.

Fourth-order centered stencils in the interior with fourth-order one-sided
closure at the truncation boundary.  All functions accept and return fields
in mesh shape (n, n) or (n, n, n).
"""

from __future__ import annotations

import numpy as np

__all__ = ["axis_derivative", "gradient_mesh", "divergence_mesh"]


def axis_derivative(mesh: np.ndarray, h: float, axis: int) -> np.ndarray:
    """d/dv along one axis, 4th order centered + one-sided closure."""
    f = np.moveaxis(mesh, axis, 0)
    n = f.shape[0]
    if n < 6:
        raise ValueError("need at least 6 nodes per axis for the 4th-order stencil")
    out = np.empty_like(f)
    out[2:n - 2] = (f[0:n - 4] - 8 * f[1:n - 3] + 8 * f[3:n - 1] - f[4:n]) / (12 * h)
    out[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    out[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    out[n - 2] = (3 * f[n - 1] + 10 * f[n - 2] - 18 * f[n - 3] + 6 * f[n - 4] - f[n - 5]) / (12 * h)
    out[n - 1] = (25 * f[n - 1] - 48 * f[n - 2] + 36 * f[n - 3] - 16 * f[n - 4] + 3 * f[n - 5]) / (12 * h)
    return np.moveaxis(out, 0, axis)


def gradient_mesh(mesh: np.ndarray, h: float) -> np.ndarray:
    """Gradient of a mesh field; leading axis of the result indexes components."""
    return np.stack([axis_derivative(mesh, h, ax) for ax in range(mesh.ndim)])


def divergence_mesh(vec: np.ndarray, h: float) -> np.ndarray:
    """Divergence of a vector field given as (d, n, ..., n)."""
    return sum(axis_derivative(vec[ax], h, ax) for ax in range(vec.shape[0]))
