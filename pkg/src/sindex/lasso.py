"""l1-penalized fitting of the streaming surrogate objectives.

The smooth part is a PSD quadratic carrying the history plus twice the
current-half loss, all divided by the running sample count:

    f(beta) = [ (beta - c)' A (beta - c) / 2 + 2 * sum_i l(y_i, x_i' beta) ] / scale

Minimization of f + lam * ||beta||_1 uses monotone FISTA with backtracking;
optimality is certified through the l1 subgradient (KKT) residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._threads import serial_blas
from .datamodel import Batch
from .losses import LossSpec, loss_score, loss_value

KKT_TOL = 1e-6
MAX_ITER = 10_000
BACKTRACK_SHRINK = 0.5  # step-size shrink factor; the Lipschitz guess doubles
POWER_STEPS = 50


class ConvergenceError(RuntimeError):
    pass


def soft_threshold(x, t):
    """Proximal map of t * |.|: sign(x) * max(|x| - t, 0)."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@dataclass
class SurrogateObjective:
    """History-as-quadratic surrogate for one split at one step.

    quad_matrix is the accumulated unnormalized Hessian sum for the split
    (zero or None when there is no history), quad_center the anchor of the
    quadratic, half the current half-batch, and scale the running total
    sample count N_s.
    """

    quad_center: np.ndarray
    quad_matrix: np.ndarray | None
    half: Batch
    loss: LossSpec
    scale: float
    _lip: float | None = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return self.half.p

    def _quad(self, beta):
        if self.quad_matrix is None:
            return None
        return self.quad_matrix @ (beta - self.quad_center)

    def value(self, beta) -> float:
        """Smooth objective f(beta) (penalty excluded)."""
        v = 2.0 * float(np.sum(loss_value(self.loss, self.half.y, self.half.x @ beta)))
        q = self._quad(beta)
        if q is not None:
            v += 0.5 * float((beta - self.quad_center) @ q)
        return v / self.scale

    def gradient(self, beta) -> np.ndarray:
        s = loss_score(self.loss, self.half.y, self.half.x @ beta)
        g = 2.0 * (self.half.x.T @ s)
        q = self._quad(beta)
        if q is not None:
            g = g + q
        return g / self.scale

    def lipschitz_bound(self) -> float:
        """Spectral-norm upper bound for the smooth curvature (power iteration)."""
        if self._lip is None:
            x = self.half.x
            w = self.loss.max_weight
            p = self.p
            v = np.full(p, 1.0 / np.sqrt(p))

            def op(u):
                r = 2.0 * w * (x.T @ (x @ u))
                if self.quad_matrix is not None:
                    r = r + self.quad_matrix @ u
                return r

            for _ in range(POWER_STEPS):
                u = op(v)
                nu = np.linalg.norm(u)
                if nu == 0.0:
                    break
                v = u / nu
            lam = float(v @ op(v))
            self._lip = max(lam * 1.05 / self.scale, 1e-12)
        return self._lip


def kkt_residual(beta, grad, lam: float) -> float:
    """Max-norm violation of the l1 subgradient optimality conditions."""
    beta = np.asarray(beta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    on = beta != 0.0
    res = np.where(on,
                   np.abs(grad + lam * np.sign(beta)),
                   np.maximum(np.abs(grad) - lam, 0.0))
    return float(np.max(res)) if res.size else 0.0


def _fista(obj: SurrogateObjective, lam, warm, kkt_tol, max_iter, debug=False):
    with serial_blas():
        return _fista_loop(obj, lam, warm, kkt_tol, max_iter, debug)


def _fista_loop(obj, lam, warm, kkt_tol, max_iter, debug=False):
    x = np.asarray(warm, dtype=float).copy()
    if x.shape != (obj.p,):
        raise ValueError("warm start has wrong shape")
    L = obj.lipschitz_bound()

    if kkt_residual(x, obj.gradient(x), lam) <= kkt_tol:
        return x

    def prox_step(point, L):
        # backtracking: accept once the quadratic upper model holds at point
        g = obj.gradient(point)
        fp = obj.value(point)
        while True:
            z = soft_threshold(point - g / L, lam / L)
            d = z - point
            fz = obj.value(z)
            if fz <= fp + g @ d + 0.5 * L * (d @ d) + 1e-12 * abs(fp):
                return z, fz, L
            L /= BACKTRACK_SHRINK
            if not np.isfinite(L) or L > 1e30:
                raise ConvergenceError("backtracking failed: step size underflow")

    Fx = obj.value(x) + lam * float(np.sum(np.abs(x)))
    y = x.copy()
    t = 1.0
    res = np.inf
    for it in range(1, max_iter + 1):
        z, fz, L = prox_step(y, L)
        Fz = fz + lam * float(np.sum(np.abs(z)))
        if Fz > Fx:
            # ascent: restart momentum with a plain descent step from x
            t = 1.0
            z, fz, L = prox_step(x, L)
            Fz = fz + lam * float(np.sum(np.abs(z)))
        if debug and Fz > Fx + 1e-12 * max(1.0, abs(Fx)):
            raise AssertionError("objective increased")
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = z + ((t - 1.0) / t_next) * (z - x)
        x, Fx, t = z, Fz, t_next
        if it % 5 == 0 or it == max_iter:
            res = kkt_residual(x, obj.gradient(x), lam)
            if res <= kkt_tol:
                return x
    raise ConvergenceError(
        f"lasso solver did not reach KKT tolerance {kkt_tol:g} in {max_iter} "
        f"iterations (final residual {res:.3e}, step bound {L:.3e})"
    )


def fit_online_lasso(obj: SurrogateObjective, lam: float, warm_start,
                     kkt_tol: float = KKT_TOL, max_iter: int = MAX_ITER,
                     debug: bool = False) -> np.ndarray:
    """Minimize the surrogate objective plus lam * ||.||_1 from a warm start."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return _fista(obj, lam, warm_start, kkt_tol, max_iter, debug=debug)


def fit_initial_lasso(half: Batch, loss: LossSpec, lam: float,
                      kkt_tol: float = KKT_TOL, max_iter: int = MAX_ITER) -> np.ndarray:
    """First-batch fit: (2/n_1) * half loss + lam * ||.||_1, started at zero."""
    if half.n == 0:
        raise ValueError("empty half-batch")
    p = half.p
    obj = SurrogateObjective(quad_center=np.zeros(p), quad_matrix=None,
                             half=half, loss=loss, scale=2.0 * half.n)
    return fit_online_lasso(obj, lam, np.zeros(p), kkt_tol=kkt_tol, max_iter=max_iter)


def lambda_max(obj: SurrogateObjective) -> float:
    """Smallest penalty for which zero satisfies the optimality conditions."""
    return float(np.max(np.abs(obj.gradient(np.zeros(obj.p)))))
