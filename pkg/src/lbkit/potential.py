"""Interaction potential models through their radial Fourier transform.

Every formula in the toolkit consumes the potential only through V(k) as a
function of |k|, so models are specified directly on the Fourier side.  The
admissibility conditions (decay exponent above d+3, two-sided bound on
V^2 (1+|k|)^s, bounded first and second derivatives) are checked numerically
by :func:`validate_assumption`.

Note: parts of the underlying theory use the incompatible growth bound
|V(k)| <= C (1+|k|)^(d+1) in intermediate estimates; this module enforces the
decay-side condition only, which is the one every implemented formula needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import PchipInterpolator

__all__ = ["PotentialModel", "fourier_potential", "validate_assumption", "ValidationReport"]


@dataclass(frozen=True)
class PotentialModel:
    """Radial Fourier-side potential model.

    form:
        "inverse_power"  -- V(k) = amplitude * (1+|k|)^(-s/2)
        "gaussian_like"  -- V(k) = amplitude * exp(-(|k|/scale)^2/2), truncated
                            smoothly so derivatives stay bounded
        "tabulated"      -- monotone cubic interpolation of (k, V) samples on a
                            log-|k| axis; queries outside the table raise
    """

    s: float
    s_prime: float
    amplitude: float = 1.0
    form: str = "inverse_power"
    table_k: np.ndarray = dc_field(default=None, repr=False, compare=False)
    table_v: np.ndarray = dc_field(default=None, repr=False, compare=False)
    gaussian_scale: float = 1.0

    @classmethod
    def default(cls, d: int = 2, amplitude: float = 1.0) -> "PotentialModel":
        # minimal margin above the d+3 admissibility threshold
        return cls(s=d + 4.0, s_prime=d + 4.0, amplitude=amplitude)

    @classmethod
    def tabulated(cls, k_samples, v_samples, s: float, s_prime: float) -> "PotentialModel":
        k_samples = np.asarray(k_samples, dtype=float)
        v_samples = np.asarray(v_samples, dtype=float)
        if k_samples.ndim != 1 or k_samples.shape != v_samples.shape:
            raise ValueError("table arrays must be 1-D and of equal length")
        if np.any(np.diff(k_samples) <= 0) or k_samples[0] < 0:
            raise ValueError("table abscissae must be nonnegative and increasing")
        return cls(s=s, s_prime=s_prime, amplitude=1.0, form="tabulated",
                   table_k=k_samples, table_v=v_samples)

    def __post_init__(self):
        if self.form not in ("inverse_power", "gaussian_like", "tabulated"):
            raise ValueError(f"unknown potential form {self.form!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        if self.form == "tabulated":
            q = PchipInterpolator(np.log1p(self.table_k), self.table_v)
            object.__setattr__(self, "_table_interp", q)

    def __call__(self, k_norm):
        return fourier_potential(self, k_norm)


def fourier_potential(model: PotentialModel, k_norm):
    """V(|k|) for one of the supported model forms.

    Accepts scalars or arrays; values must be nonnegative wavenumbers.
    """
    k = np.asarray(k_norm, dtype=float)
    scalar = k.ndim == 0
    k = np.atleast_1d(k)
    if np.any(k < 0):
        raise ValueError("wavenumber magnitude must be nonnegative")
    if model.form == "inverse_power":
        out = model.amplitude * (1.0 + k) ** (-model.s / 2.0)
    elif model.form == "gaussian_like":
        # smooth truncation keeps the tail strictly positive but negligible
        out = model.amplitude * np.exp(-0.5 * (k / model.gaussian_scale) ** 2)
        out = out + model.amplitude * 1e-14 * (1.0 + k) ** (-model.s / 2.0)
    else:
        lo, hi = model.table_k[0], model.table_k[-1]
        if np.any(k < lo - 1e-12) or np.any(k > hi + 1e-12):
            raise ValueError(
                f"tabulated potential queried at |k| outside [{lo}, {hi}]")
        out = model._table_interp(np.log1p(np.clip(k, lo, hi)))
    return float(out[0]) if scalar else out


@dataclass
class ValidationReport:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def __str__(self) -> str:
        lines = [f"  [{'ok' if v else 'FAIL'}] {name}" for name, v in self.checks.items()]
        return "potential admissibility:\n" + "\n".join(lines)


def validate_assumption(model: PotentialModel, d: int) -> ValidationReport:
    """Numerical admissibility report for a potential model in dimension d.

    Checks, on a log-spaced wavenumber scan up to 1e3:
      * decay exponents exceed d+3,
      * two-sided bound 1/C <= V^2 (1+|k|)^s <= C,
      * finite-difference first/second derivatives bounded by
        C (1+|k|)^(-s'/2).
    """
    if d < 2:
        raise ValueError("dimension must be at least 2")
    checks: dict = {}
    checks["s_exceeds_d_plus_3"] = model.s > d + 3
    checks["s_prime_exceeds_d_plus_3"] = model.s_prime > d + 3

    if model.form == "tabulated":
        k_hi = float(model.table_k[-1])
    else:
        k_hi = 1e3
    k = np.concatenate([[0.0], np.geomspace(1e-3, k_hi, 400)])
    v = fourier_potential(model, k)
    ratio = v**2 * (1.0 + k) ** model.s
    big_c = max(model.amplitude**2, 1.0) / max(min(ratio.min(), 1.0), 1e-300)
    big_c = max(big_c, ratio.max() / max(model.amplitude**2, 1e-300)) + 1e-12
    checks["two_sided_bound_finite"] = bool(np.all(ratio > 0) and np.isfinite(big_c))
    if model.form == "inverse_power":
        target = model.amplitude**2
        checks["two_sided_bound_tight"] = bool(
            np.all(ratio <= target + 1e-12) and np.all(ratio >= target - 1e-12))

    eps = 1e-4
    kd = k[k >= eps]
    v0 = fourier_potential(model, kd)
    vp = (fourier_potential(model, kd + eps) - fourier_potential(model, np.maximum(kd - eps, 0.0))) / (2 * eps)
    vpp = (fourier_potential(model, kd + eps) - 2 * v0 + fourier_potential(model, np.maximum(kd - eps, 0.0))) / eps**2
    envelope = (1.0 + kd) ** (-model.s_prime / 2.0)
    cd1 = np.max(np.abs(vp) / envelope) if len(kd) else 0.0
    cd2 = np.max(np.abs(vpp) / envelope) if len(kd) else 0.0
    checks["derivative_decay_bounded"] = bool(np.isfinite(cd1) and np.isfinite(cd2))

    checks["finite_everywhere"] = bool(np.all(np.isfinite(v)))
    if model.form == "inverse_power":
        checks["strictly_positive"] = bool(np.all(v > 0))
    return ValidationReport(checks=checks)
