"""Debiased coordinate estimates, their variance, intervals and p-values.

The split-1 debiased vector is the split-1 lasso estimate plus a precision-
weighted correction assembled from the stored summary statistics:

    d1 = beta1 + Omega1' [ Q1_prev - Hsum1_prev beta1 - n_s grad_l1(beta2) ] / N_s

(and symmetrically for split 2); the averaged estimator is their midpoint.
The variance of the averaged estimator uses the accumulated gradient
outer-product sum T:  sigma_l^2 = v_l' T v_l / 4 with v_l the sum of the two
precision columns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .precision import PrecisionEstimate

logger = logging.getLogger("sindex")


@dataclass
class DebiasInputs:
    """Everything needed for one debiasing pass at step s.

    q1_prev / q2_prev are the correction accumulators through step s-1,
    hsum1_prev / hsum2_prev the unnormalized Hessian sums through step s-1,
    and grad1_step / grad2_step the newest batch's gradient increments
    n_s * grad l_k^(s) evaluated at the opposite split's step-s estimate.
    """

    beta1: np.ndarray
    beta2: np.ndarray
    hsum1_prev: np.ndarray
    hsum2_prev: np.ndarray
    q1_prev: np.ndarray
    q2_prev: np.ndarray
    grad1_step: np.ndarray
    grad2_step: np.ndarray
    omega1: PrecisionEstimate
    omega2: PrecisionEstimate
    tsum: np.ndarray
    n_total: float


def _omega_matrix(om) -> np.ndarray:
    return om.omega if isinstance(om, PrecisionEstimate) else np.asarray(om, float)


def debias_estimates(inp: DebiasInputs):
    """Return (beta_d1, beta_d2, beta_da)."""
    p = inp.beta1.shape[0]
    for name in ("beta2", "q1_prev", "q2_prev", "grad1_step", "grad2_step"):
        if getattr(inp, name).shape != (p,):
            raise ValueError(f"{name} has wrong shape")
    om1 = _omega_matrix(inp.omega1)
    om2 = _omega_matrix(inp.omega2)
    c1 = inp.q1_prev - inp.hsum1_prev @ inp.beta1 - inp.grad1_step
    c2 = inp.q2_prev - inp.hsum2_prev @ inp.beta2 - inp.grad2_step
    beta_d1 = inp.beta1 + om1.T @ c1 / inp.n_total
    beta_d2 = inp.beta2 + om2.T @ c2 / inp.n_total
    return beta_d1, beta_d2, 0.5 * (beta_d1 + beta_d2)


def estimate_variance(omega1, omega2, tsum, n_total) -> np.ndarray:
    """Per-coordinate variance of the averaged debiased estimator.

    Uses the symmetric quadratic form (v_l' T v_l) / 4, v_l the sum of the
    l-th precision columns, T = tsum / n_total.
    """
    v = _omega_matrix(omega1) + _omega_matrix(omega2)
    t = np.asarray(tsum, dtype=float) / n_total
    sig2 = np.einsum("il,il->l", v, t @ v) / 4.0
    low = sig2 < 0.0
    if np.any(sig2 < -1e-12):
        raise RuntimeError(
            f"variance estimate is negative beyond tolerance "
            f"(min {sig2.min():.3e}); T accumulator violates PSD"
        )
    if np.any(low):
        logger.warning("clamping %d slightly negative variance estimates to 0",
                       int(low.sum()))
        sig2 = np.where(low, 0.0, sig2)
    return sig2


def normal_upper_quantile(q: float) -> float:
    """z with P(N(0,1) > z) = q."""
    return float(ndtri(1.0 - q))


def confidence_interval(beta_da_l, sigma_l, n_total, alpha: float):
    """Two-sided interval  beta -/+ sigma * z_{alpha/2} / sqrt(N)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if np.any(np.asarray(sigma_l) < 0.0):
        raise ValueError("sigma must be nonnegative")
    half = np.asarray(sigma_l) * normal_upper_quantile(alpha / 2.0) / np.sqrt(n_total)
    return beta_da_l - half, beta_da_l + half


def p_value(beta_da_l, sigma_l, n_total):
    """Two-sided p-value 2(1 - Phi(sqrt(N) |beta| / sigma)); sigma = 0 degenerates."""
    beta = np.asarray(beta_da_l, dtype=float)
    sigma = np.asarray(sigma_l, dtype=float)
    if np.any(sigma < 0.0):
        raise ValueError("sigma must be nonnegative")
    degenerate = sigma == 0.0
    if np.any(degenerate):
        logger.warning("degenerate p-value(s): sigma is exactly zero")
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.sqrt(n_total) * np.abs(beta) / sigma
    pv = 2.0 * ndtr(-stat)
    pv = np.where(degenerate, np.where(beta != 0.0, 0.0, 1.0), pv)
    return float(pv) if pv.ndim == 0 else pv
