"""CIR intensity analytics: coefficients, survival factors, classical price."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import CirParams


def _nonnegative(y, name="intensity"):
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0.0) or np.any(np.isnan(arr)):
        raise ValueError(f"{name} must be >= 0")
    return arr


def drift_b(y, cir: CirParams):
    """Mean-reverting drift alpha (lambda_bar - y)."""
    arr = _nonnegative(y)
    out = cir.alpha * (cir.lambda_bar - arr)
    return out if out.ndim else float(out)


def vol_a(y, cir: CirParams):
    """Diffusion coefficient phi sqrt(y)."""
    arr = _nonnegative(y)
    out = cir.phi * np.sqrt(arr)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SurvivalFactors:
    A: float
    B: float
    xi: float


def survival_factors(tau: float, cir: CirParams) -> SurvivalFactors:
    """Affine factors with E[exp(-int_0^tau lambda)] = A exp(-B lambda_0).

    Both factors are evaluated through ``exp(-xi tau)`` so that arbitrarily
    long horizons never overflow; for large ``xi tau`` this reduces to
    ``B = 2 / (alpha + xi)`` and a log ``A`` linear in ``tau``.
    """
    if not tau >= 0.0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    alpha, phi = cir.alpha, cir.phi
    xi = math.sqrt(alpha * alpha + 2.0 * phi * phi)
    if tau == 0.0:
        return SurvivalFactors(1.0, 0.0, xi)
    em1 = math.expm1(-xi * tau)
    # xi - alpha without cancellation, so that phi -> 0 stays accurate
    delta = 2.0 * phi * phi / (xi + alpha)
    # 2 xi + (alpha + xi)(e^{xi tau} - 1) = e^{xi tau} [2 xi + delta (e^{-xi tau} - 1)]
    B = -2.0 * em1 / (2.0 * xi + delta * em1)
    # log A = (2 alpha lambda_bar / phi^2) [-log1p(x) - delta tau / 2], x = delta em1 / (2 xi);
    # the prefactor times delta is kappa, free of phi^2
    kappa = 4.0 * alpha * cir.lambda_bar / (xi + alpha)
    x = delta * em1 / (2.0 * xi)
    log1p_ratio = math.log1p(x) / x if x != 0.0 else 1.0
    log_A = -kappa * (em1 / (2.0 * xi) * log1p_ratio + 0.5 * tau)
    return SurvivalFactors(math.exp(log_A), B, xi)


def survival_prob(lambda0: float, tau: float, cir: CirParams) -> float:
    """Pre-default survival probability over ``tau`` years from intensity ``lambda0``."""
    if not lambda0 >= 0.0:
        raise ValueError(f"lambda0 must be >= 0, got {lambda0}")
    f = survival_factors(tau, cir)
    return f.A * math.exp(-f.B * lambda0)


def classical_price(lambda0: float, T: float, r: float, cir: CirParams) -> float:
    """Reduced-form zero-recovery bond price exp(-rT) E[exp(-int lambda)]."""
    return math.exp(-r * T) * survival_prob(lambda0, T, cir)


def classical_spread(lambda0: float, T: float, cir: CirParams) -> float:
    """Yield spread of the classical price; ``T = 0`` returns the right limit ``lambda0``."""
    if T == 0.0:
        return float(lambda0)
    f = survival_factors(T, cir)
    return -(math.log(f.A) - f.B * lambda0) / T
