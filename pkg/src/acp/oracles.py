"""Exact plug-in scores for finite discrete distributions.

These evaluate the same scaled divergences as the hash estimator but by
direct summation over an explicit probability table, so they serve as
independent ground truth in tests and for calibration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .estimator import g_fn

_NORM_TOL = 1e-12


def _check_pmf(pmf, expected_ndim: int) -> np.ndarray:
    p = np.asarray(pmf, dtype=np.float64)
    if p.ndim != expected_ndim:
        raise ValidationError(f"pmf must be {expected_ndim}-D")
    if np.any(p < 0):
        raise ValidationError("pmf entries must be non-negative")
    if abs(p.sum() - 1.0) > _NORM_TOL:
        raise ValidationError("pmf must sum to 1")
    return p


def _phi_table(phi, shape) -> np.ndarray:
    if phi is None:
        return np.ones(shape, dtype=np.float64)
    t = np.asarray(phi, dtype=np.float64)
    if t.ndim == 0:
        return np.full(shape, float(t))
    if t.shape != tuple(shape):
        raise ValidationError("phi table shape must match the pmf")
    if np.any(t < 0):
        raise ValidationError("phi must be non-negative")
    return t


def exact_cmi_discrete(pmf, phi=None) -> float:
    """Scaled conditional dependence of a finite joint table p(x, y, z).

    Computes sum_z p(z) sum_{x,y} p(x|z) p(y|z) phi(x,y,z)
    g(p(x,y|z) / (p(x|z) p(y|z))), with terms whose conditional product
    vanishes contributing zero and g evaluated at 0 (value 1/2) where only
    the conditional joint vanishes.
    """
    p = _check_pmf(pmf, 3)
    phi_t = _phi_table(phi, p.shape)
    p_z = p.sum(axis=(0, 1))
    p_xz = p.sum(axis=1)
    p_yz = p.sum(axis=0)
    total = 0.0
    for k in range(p.shape[2]):
        if p_z[k] == 0.0:
            continue
        px = p_xz[:, k] / p_z[k]
        py = p_yz[:, k] / p_z[k]
        pxy = p[:, :, k] / p_z[k]
        prod = np.outer(px, py)
        mask = prod > 0.0
        ratio = np.zeros_like(prod)
        ratio[mask] = pxy[mask] / prod[mask]
        total += p_z[k] * float((prod * phi_t[:, :, k] * g_fn(ratio))[mask].sum())
    return total


def exact_ami_discrete(pmf, phi=None) -> float:
    """Unconditional counterpart over a 2-D table p(x, y)."""
    p = _check_pmf(pmf, 2)
    phi_t = _phi_table(phi, p.shape)
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    prod = np.outer(px, py)
    mask = prod > 0.0
    ratio = np.zeros_like(prod)
    ratio[mask] = p[mask] / prod[mask]
    return float((prod * phi_t * g_fn(ratio))[mask].sum())


@dataclass(frozen=True)
class AmiBounds:
    lower: float
    upper: float
    value: float


def exact_ami_bounds_discrete(pmf, phi=None) -> AmiBounds:
    """Plug-in score together with its analytic lower and upper bounds.

    The lower bound is 0 (attained under independence); the upper bound is
    (1/2) E_{P_X P_Y}[phi (ratio + 1)] = (1/2) sum phi (p_xy + p_x p_y),
    approached when the joint and the product measure share no mass.
    """
    p = _check_pmf(pmf, 2)
    phi_t = _phi_table(phi, p.shape)
    value = exact_ami_discrete(p, phi_t)
    prod = np.outer(p.sum(axis=1), p.sum(axis=0))
    upper = 0.5 * float((phi_t * (p + prod)).sum())
    lower = 0.0
    slack = 1e-12 * max(1.0, abs(upper))
    if not (lower - slack <= value <= upper + slack):
        raise AssertionError(
            f"bounds violated: {lower} <= {value} <= {upper} is false")
    return AmiBounds(lower=lower, upper=upper, value=value)
