"""Convex losses for single-index fitting: value, score and Hessian weight.

Each loss acts on the linear predictor ``eta = x @ beta``.  The score is the
scalar derivative d/d_eta of the loss, so the per-observation gradient in beta
is ``score * x`` and the Hessian contribution is ``weight * outer(x, x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

HUBER = "huber"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class LossSpec:
    """Choice of convex loss.

    kind : "huber" or "logistic".
    tau  : Huber threshold in response units; must be positive and is only
           meaningful for the Huber loss.
    """

    kind: str
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in (HUBER, LOGISTIC):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == HUBER:
            if self.tau is None or not (self.tau > 0):
                raise ValueError("huber loss requires tau > 0")
        elif self.tau is not None:
            raise ValueError("tau is only valid for the huber loss")

    def with_tau(self, tau: float) -> "LossSpec":
        if self.kind != HUBER:
            raise ValueError("tau only applies to the huber loss")
        return LossSpec(HUBER, tau)

    @property
    def max_weight(self) -> float:
        """Upper bound on the Hessian weight, used for step-size bounds."""
        return 1.0 if self.kind == HUBER else 0.25


def _check_binary(y):
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic loss requires responses in {0, 1}")


def loss_value(spec: LossSpec, y, eta):
    """Loss value; vectorized over (y, eta)."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if spec.kind == HUBER:
        r = y - eta
        a = np.abs(r)
        tau = spec.tau
        return np.where(a <= tau, 0.5 * r * r, tau * a - 0.5 * tau * tau)
    _check_binary(y)
    # log(1 + exp(eta)) - y*eta, overflow-safe for large |eta|
    return np.logaddexp(0.0, eta) - y * eta


def loss_score(spec: LossSpec, y, eta):
    """d/d_eta of the loss.  Huber: -psi_tau(y - eta); logistic: sigmoid(eta) - y."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if spec.kind == HUBER:
        return -np.clip(y - eta, -spec.tau, spec.tau)
    _check_binary(y)
    return expit(eta) - y


def hessian_weight(spec: LossSpec, y, eta):
    """Nonnegative curvature weight w(y, eta) in the Hessian term w * x x'."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if spec.kind == HUBER:
        # closed interval |r| <= tau, matching the indicator in the Huber Hessian
        return (np.abs(y - eta) <= spec.tau).astype(float)
    _check_binary(y)
    p = expit(eta)
    return p * expit(-eta)


def select_tau(residuals, coverage: float = 0.8) -> float:
    """Smallest tau with at least ``coverage`` of |residuals| inside [-tau, tau].

    Returns the ceil(coverage * n)-th order statistic of the absolute
    residuals.  Raises on empty input and on a zero result (degenerate
    residuals), in which case the caller should fall back to its previous tau.
    """
    r = np.abs(np.asarray(residuals, dtype=float)).ravel()
    n = r.size
    if n == 0:
        raise ValueError("cannot select tau from empty residuals")
    if not 0.0 < coverage < 1.0:
        raise ValueError("coverage must be in (0, 1)")
    k = math.ceil(coverage * n)
    tau = float(np.sort(r)[k - 1])
    if tau <= 0.0:
        raise ValueError("degenerate residuals: selected tau is not positive")
    return tau
