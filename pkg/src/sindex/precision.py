"""Inverse-Hessian estimation: column-wise constrained l1 minimization.

Each column solves  min ||w||_1  s.t.  ||Hbar w - e_j||_inf <= h  and the
column solutions are symmetrized by keeping, for every (j1, j2) pair, the
entry of smaller magnitude (ties keep the upper-triangle entry).

The solver is an alternating-direction splitting on the equivalent form
min ||z||_1 + box(r)  s.t.  w = z, Hbar w - e = r, with a cached Cholesky
factor of (I + Hbar^2) so all columns (and a grid of radii h) reuse one
factorization.  Columns are vectorized into matrix operations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._threads import serial_blas
from .lasso import soft_threshold

logger = logging.getLogger("sindex")

TOL_ABS = 1e-7
TOL_REL = 1e-5
MAX_ITER = 20_000
RHO = 1.0
RELAX = 1.6
FEAS_TOL = 1e-6
RIDGE_SCALE = 1e-8
CHECK_EVERY = 10
STALL_CHECKS = 80  # checks without overshoot progress before declaring infeasible


class InfeasibleError(RuntimeError):
    pass


@dataclass
class PrecisionEstimate:
    """Symmetrized inverse-Hessian estimate.

    constraint_violation holds, per column, the max-norm residual
    ||Hbar w_j - e_j||_inf of the pre-symmetrization solution; ridge is the
    diagonal adjustment added when the input matrix was singular.
    """

    omega: np.ndarray
    h_used: float
    constraint_violation: np.ndarray
    ridge: float = 0.0


@dataclass
class AdmmState:
    """Iterates carried across solves for warm starting."""

    w: np.ndarray
    z: np.ndarray
    r: np.ndarray
    uz: np.ndarray
    ur: np.ndarray
    rho: float = RHO


def symmetrize_min_magnitude(w: np.ndarray) -> np.ndarray:
    """Pairwise minimum-magnitude symmetrization; ties keep the (j1, j2) entry."""
    out = w.copy()
    iu = np.triu_indices(w.shape[0], 1)
    il = (iu[1], iu[0])
    a, b = w[iu], w[il]
    pick = np.where(np.abs(a) <= np.abs(b), a, b)
    out[iu] = pick
    out[il] = pick
    return out


class ClimeSolver:
    """Shares one factorization of (I + Hbar^2) across columns and radii.

    Internally the constraint system (Hbar, e, h) is rescaled so the operator
    has unit spectral norm; the program is invariant under that joint scaling
    and the splitting converges at a scale-independent rate.  All reported
    residuals are in original units.
    """

    def __init__(self, hbar: np.ndarray, rho: float = RHO):
        hbar = np.asarray(hbar, dtype=float)
        if hbar.ndim != 2 or hbar.shape[0] != hbar.shape[1]:
            raise ValueError("hbar must be square")
        if np.max(np.abs(hbar - hbar.T)) > 1e-8:
            raise ValueError("hbar must be symmetric")
        hbar = 0.5 * (hbar + hbar.T)
        self.p = hbar.shape[0]
        self.rho = rho
        self.ridge = 0.0
        self._pd_factor = None
        self._inv = None
        try:
            # keep the factor: positive-definite inputs admit an exact
            # inverse used to polish boundary-active columns to feasibility
            self._pd_factor = cho_factor(hbar, check_finite=False)
        except np.linalg.LinAlgError:
            self.ridge = RIDGE_SCALE * np.trace(hbar) / self.p
            hbar = hbar + self.ridge * np.eye(self.p)
            logger.debug("singular hbar: added ridge %.3e", self.ridge)
        self.hbar = hbar
        v = np.full(self.p, 1.0 / np.sqrt(self.p))
        for _ in range(30):
            u = hbar @ v
            nu = np.linalg.norm(u)
            if nu == 0.0:
                break
            v = u / nu
        spec_norm = float(abs(v @ (hbar @ v)))
        self.scale = 1.0 / spec_norm if spec_norm > 0 else 1.0
        self._hb = self.scale * hbar
        self._factor = cho_factor(np.eye(self.p) + self._hb @ self._hb,
                                  check_finite=False)

    def solve(self, h: float, cols=None, warm: AdmmState | None = None,
              tol_abs: float = TOL_ABS, tol_rel: float = TOL_REL,
              max_iter: int = MAX_ITER) -> tuple[np.ndarray, np.ndarray, AdmmState]:
        """Solve the constrained program for the requested columns.

        Returns (w, violations, state): the stacked column solutions, their
        feasibility residuals ||Hbar w_j - e_j||_inf, and the final iterates.
        Raises InfeasibleError when the iteration cap is hit without a
        feasible point.
        """
        with serial_blas():
            return self._solve(h, cols, warm, tol_abs, tol_rel, max_iter)

    def _solve(self, h, cols, warm, tol_abs, tol_rel, max_iter):
        if not h > 0:
            raise ValueError("h must be positive")
        p, rho = self.p, self.rho
        if cols is None:
            e = np.eye(p)
        else:
            cols = np.atleast_1d(cols)
            e = np.zeros((p, cols.size))
            e[cols, np.arange(cols.size)] = 1.0
        nb = e.shape[1]
        hb = self._hb                      # scaled operator
        e_s = self.scale * e               # scaled targets
        h_s = self.scale * h               # scaled radius
        if warm is None:
            w = np.zeros((p, nb))
            z = np.zeros((p, nb))
            r = np.clip(-e_s, -h_s, h_s)
            uz = np.zeros((p, nb))
            ur = np.zeros((p, nb))
        elif isinstance(warm, np.ndarray):
            # primal-only warm start (duals from another operator mislead)
            w = warm.copy()
            z = warm.copy()
            r = np.clip(hb @ warm - e_s, -h_s, h_s)
            uz = np.zeros((p, nb))
            ur = np.zeros((p, nb))
        else:
            w, z = warm.w.copy(), warm.z.copy()
            r = np.clip(warm.r, -h_s, h_s)
            uz, ur = warm.uz.copy(), warm.ur.copy()
            rho = warm.rho

        sq = np.sqrt(2.0 * p * nb)
        norm_e = np.linalg.norm(e_s)
        converged = False
        best_overshoot = np.inf
        stalled_checks = 0
        # a positive-definite matrix makes every radius feasible, so the
        # stall exit (early infeasibility call) only applies after a ridge
        stall_enabled = self.ridge > 0.0
        viol = np.full(nb, np.inf)
        for it in range(1, max_iter + 1):
            w = cho_solve(self._factor, (z - uz) + hb @ (e_s + r - ur),
                          check_finite=False)
            hw = hb @ w
            # over-relaxed z / r updates
            wz = RELAX * w + (1.0 - RELAX) * z
            wr = RELAX * (hw - e_s) + (1.0 - RELAX) * r
            z_new = soft_threshold(wz + uz, 1.0 / rho)
            r_new = np.clip(wr + ur, -h_s, h_s)
            uz += wz - z_new
            ur += wr - r_new
            dz, dr = z_new - z, r_new - r
            z, r = z_new, r_new
            if it % CHECK_EVERY == 0 or it == max_iter:
                viol = np.max(np.abs(hw - e_s), axis=0) / self.scale
                overshoot = max(float(viol.max()) - h, 0.0)
                rp = np.sqrt(np.linalg.norm(w - z) ** 2
                             + np.linalg.norm(hw - e_s - r) ** 2)
                rd = rho * np.linalg.norm(dz + hb @ dr)
                eps_pri = sq * tol_abs + tol_rel * max(
                    np.sqrt(np.linalg.norm(w) ** 2 + np.linalg.norm(hw) ** 2),
                    np.sqrt(np.linalg.norm(z) ** 2 + np.linalg.norm(r) ** 2),
                    norm_e)
                # normalize the dual test by the pre-cancellation components;
                # their sum vanishes at optimality and would never pass
                eps_dual = sq * tol_abs + tol_rel * rho * max(
                    np.linalg.norm(uz), np.linalg.norm(hb @ ur))
                # positive-definite inputs are polished to feasibility below,
                # so their stopping rule is the residual pair alone
                feas_ok = overshoot <= FEAS_TOL or self._pd_factor is not None
                if rp <= eps_pri and rd <= eps_dual and feas_ok:
                    converged = True
                    break
                # residual balancing: grow/shrink the penalty to equalize rates
                if rp > 10.0 * rd and rho < 1e4:
                    rho *= 2.0
                    uz /= 2.0
                    ur /= 2.0
                elif rd > 10.0 * rp and rho > 1e-4:
                    rho /= 2.0
                    uz *= 2.0
                    ur *= 2.0
                # infeasible radii stall with a persistent constraint overshoot
                if stall_enabled:
                    if (not np.isfinite(best_overshoot)
                            or overshoot < best_overshoot - max(1e-9, 1e-3 * best_overshoot)):
                        best_overshoot = overshoot
                        stalled_checks = 0
                    elif overshoot > FEAS_TOL:
                        stalled_checks += 1
                        if stalled_checks >= STALL_CHECKS:
                            break
        if self._pd_factor is not None:
            viol = self._polish(w, e, h, viol)
        elif h >= 1.0:
            # singular case at full radius: zero is feasible, shrink onto it
            over = viol > h
            if np.any(over):
                idx = np.nonzero(over)[0]
                shrink = (1.0 - 1e-12) * np.minimum((h - 1.0) / np.maximum(
                    viol[idx] - 1.0, 1e-300), 1.0)
                w[:, idx] *= shrink
                viol = viol.copy()
                viol[idx] = np.max(np.abs(self.hbar @ w[:, idx] - e[:, idx]),
                                   axis=0)
        if np.any(viol > h + FEAS_TOL):
            j = int(np.argmax(viol))
            label = j if cols is None else int(np.atleast_1d(cols)[j])
            raise InfeasibleError(
                f"column {label}: constraint residual {viol[j]:.3e} exceeds "
                f"h={h:g} after {it} iterations; increase h"
            )
        if not converged:
            logger.warning("clime admm stopped at the %d-iteration cap at h=%g "
                           "(feasible point returned)", max_iter, h)
        return w, viol, AdmmState(w, z, r, uz, ur, rho)

    def _polish(self, w, e, h, viol):
        """Blend boundary-overshooting columns toward the exact inverse.

        The constraint residual is affine in the blend weight, so the
        smallest weight restoring feasibility is (viol - h) / viol; the l1
        objective moves by at most that fraction of the inverse's norm.
        """
        over = viol > h
        if not np.any(over):
            return viol
        if self._inv is None:
            self._inv = cho_solve(self._pd_factor, np.eye(self.p),
                                  check_finite=False)
        idx = np.nonzero(over)[0]
        target = self._inv @ e[:, idx]  # exact inverse columns, residual zero
        theta = 1.0 - (1.0 - 1e-12) * h / viol[idx]
        w[:, idx] = (1.0 - theta) * w[:, idx] + theta * target
        viol = viol.copy()
        viol[idx] = np.max(np.abs(self.hbar @ w[:, idx] - e[:, idx]), axis=0)
        return viol


def estimate_precision_column(hbar, j: int, h: float, **kw) -> np.ndarray:
    """Single pre-symmetrization column of the constrained-l1 inverse estimate."""
    solver = ClimeSolver(hbar)
    w, _, _ = solver.solve(h, cols=j, **kw)
    return w[:, 0]


def estimate_precision(hbar, h: float, solver: ClimeSolver | None = None,
                       warm: AdmmState | None = None, **kw) -> PrecisionEstimate:
    """All columns plus minimum-magnitude symmetrization."""
    if solver is None:
        solver = ClimeSolver(hbar)
    w, viol, _ = solver.solve(h, warm=warm, **kw)
    return PrecisionEstimate(omega=symmetrize_min_magnitude(w), h_used=h,
                             constraint_violation=viol, ridge=solver.ridge)
