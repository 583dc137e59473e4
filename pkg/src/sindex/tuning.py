"""Tuning-parameter selection.

Penalty levels for the two split lassos are chosen per step by a modified
BIC over a log-spaced grid anchored at the full-shrinkage level.  The
precision-matrix radii are chosen by offline cross-validation on the first
batch and afterwards by rolling recalibration: candidate estimates trained
on history are scored by the likelihood loss  tr(H_val W) - log det W  on
the newest batch's empirical Hessian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Batch
from .lasso import SurrogateObjective, fit_initial_lasso, fit_online_lasso, lambda_max
from .losses import LossSpec, hessian_weight
from .precision import AdmmState, ClimeSolver, InfeasibleError, PrecisionEstimate, \
    symmetrize_min_magnitude

logger = logging.getLogger("sindex")


def _default_h_grid():
    return tuple(np.geomspace(1e-3, 1.0, 20))


@dataclass
class TuningConfig:
    """Grids and constants; defaults follow the library-wide conventions.

    rolling_raw_scale switches the rolling validation statistic to the raw
    2/n_s trace factor instead of the scale-consistent normalized form.
    h_restrict_after, when set, narrows the radius grid to the
    h_restrict_width candidates nearest the previous winner once the step
    index exceeds it.
    """

    lambda_grid_size: int = 50
    lambda_grid_ratio: float = 0.01
    h_grid: tuple = field(default_factory=_default_h_grid)
    bic_c: float = 1.0
    cv_folds: int = 5
    rolling_raw_scale: bool = False
    h_restrict_after: int | None = None
    h_restrict_width: int = 5

    def __post_init__(self):
        if self.lambda_grid_size < 1:
            raise ValueError("lambda grid must be nonempty")
        if not 0.0 < self.lambda_grid_ratio <= 1.0:
            raise ValueError("lambda_grid_ratio must be in (0, 1]")
        hg = tuple(float(h) for h in self.h_grid)
        if len(hg) == 0 or any(h <= 0 for h in hg):
            raise ValueError("h grid must be nonempty and strictly positive")
        if list(hg) != sorted(hg):
            raise ValueError("h grid must be sorted ascending")
        object.__setattr__(self, "h_grid", hg)


def modified_bic(beta_candidate, obj: SurrogateObjective, n_eff: float,
                 p: int, c: float) -> float:
    """log(surrogate objective) plus c*loglog(p) * log(n_eff)/n_eff * support size."""
    val = obj.value(np.asarray(beta_candidate, dtype=float))
    if val <= 0.0:
        logger.warning("modified BIC: nonpositive objective (perfect fit)")
        return -math.inf
    nnz = int(np.count_nonzero(beta_candidate))
    return math.log(val) + c * math.log(math.log(p)) * (math.log(n_eff) / n_eff) * nnz


def lambda_grid(obj: SurrogateObjective, cfg: TuningConfig) -> np.ndarray:
    """Descending log-spaced grid from the full-shrinkage level lam_max."""
    lam_hi = max(lambda_max(obj), 1e-12)
    if cfg.lambda_grid_size == 1:
        return np.array([lam_hi])
    return np.geomspace(lam_hi, lam_hi * cfg.lambda_grid_ratio, cfg.lambda_grid_size)


def select_lambda(obj: SurrogateObjective, cfg: TuningConfig,
                  kkt_tol: float = 1e-6, max_iter: int = 10_000):
    """Fit the penalty grid with warm starts and return the BIC-minimizing pair.

    Ties break toward the larger penalty (sparser model); a -inf score
    (perfect fit) prefers the smallest penalty achieving it.
    """
    grid = lambda_grid(obj, cfg)
    n_eff = obj.scale / 2.0
    warm = np.zeros(obj.p)
    best = (math.inf, None, None)
    for lam in grid:
        beta = fit_online_lasso(obj, float(lam), warm, kkt_tol=kkt_tol,
                                max_iter=max_iter)
        warm = beta
        score = modified_bic(beta, obj, n_eff, obj.p, cfg.bic_c)
        if score < best[0] or (score == -math.inf and best[0] == -math.inf):
            best = (score, float(lam), beta.copy())
    return best[1], best[2]


def _empirical_hessian(loss: LossSpec, y, x, beta) -> np.ndarray:
    """Average of w(y, eta) x x' over the given rows."""
    w = hessian_weight(loss, y, x @ beta)
    m = (x.T * w) @ x / y.shape[0]
    return 0.5 * (m + m.T)


def _likelihood_loss(h_val: np.ndarray, omega: np.ndarray,
                     trace_factor: float = 1.0) -> float:
    """tr(H_val W) - log det W, +inf when W is not positive definite."""
    try:
        chol = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        return math.inf
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return trace_factor * float(np.sum(h_val * omega)) - logdet


CANDIDATE_MAX_ITER = 3000  # selection-stage budget; the final solve gets the full cap


def precision_candidates(hbar, grid, solver: ClimeSolver | None = None,
                         max_iter: int = CANDIDATE_MAX_ITER, **solver_kw):
    """Constrained-l1 solutions per grid radius, chained from large to small.

    Radii that turn infeasible terminate the chain (every smaller radius is
    infeasible too).  Returns (estimates, admm states) keyed by radius.
    """
    if solver is None:
        solver = ClimeSolver(hbar)
    estimates: dict[float, PrecisionEstimate] = {}
    states: dict[float, AdmmState] = {}
    warm = None
    for h in sorted(grid, reverse=True):
        try:
            w, viol, warm = solver.solve(float(h), warm=warm,
                                         max_iter=max_iter, **solver_kw)
        except InfeasibleError:
            logger.debug("radius %g infeasible; skipping smaller radii", h)
            break
        estimates[float(h)] = PrecisionEstimate(
            omega=symmetrize_min_magnitude(w), h_used=float(h),
            constraint_violation=viol, ridge=solver.ridge)
        states[float(h)] = warm
    return estimates, states


def rolling_candidate_scan(hbar_prev, grid, h_val, trace_factor: float = 1.0,
                           solver: ClimeSolver | None = None, patience: int = 3,
                           max_iter: int = CANDIDATE_MAX_ITER,
                           tol_abs: float = 1e-6, tol_rel: float = 1e-3,
                           **solver_kw):
    """Walk the radius grid from large to small, scoring as it goes.

    Stops early once the likelihood score has not improved for ``patience``
    consecutive radii (the score profile is single-dipped in practice), or
    when a radius turns infeasible.  Candidate solves run at selection-grade
    tolerances; the winner is re-solved at contract tolerances by the caller.
    Returns (estimates, admm states, scores).
    """
    if solver is None:
        solver = ClimeSolver(hbar_prev)
    estimates: dict[float, PrecisionEstimate] = {}
    states: dict[float, AdmmState] = {}
    scores: dict[float, float] = {}
    warm = None
    best = math.inf
    since_best = 0
    for h in sorted(grid, reverse=True):
        try:
            w, viol, warm = solver.solve(float(h), warm=warm,
                                         max_iter=max_iter, tol_abs=tol_abs,
                                         tol_rel=tol_rel, **solver_kw)
        except InfeasibleError:
            logger.debug("radius %g infeasible; stopping scan", h)
            break
        om = symmetrize_min_magnitude(w)
        estimates[float(h)] = PrecisionEstimate(
            omega=om, h_used=float(h), constraint_violation=viol,
            ridge=solver.ridge)
        states[float(h)] = warm
        score = _likelihood_loss(h_val, om, trace_factor)
        scores[float(h)] = score
        if score < best:
            best = score
            since_best = 0
        elif math.isfinite(best):
            since_best += 1
            if since_best >= patience:
                break
    return estimates, states, scores


def restrict_grid(grid, winner: float, width: int):
    """The ``width`` grid radii nearest the previous winner (log distance)."""
    g = np.asarray(sorted(grid), dtype=float)
    if winner is None or width >= g.size:
        return tuple(g)
    order = np.argsort(np.abs(np.log(g) - np.log(winner)), kind="stable")
    return tuple(sorted(g[order[:width]]))


def select_h_first_batch(h_candidates, batch: Batch, loss: LossSpec,
                         folds: int, lam: float | None = None,
                         bic_cfg: TuningConfig | None = None,
                         **solver_kw) -> float:
    """Cross-validated radius selection on one first-batch half.

    Each fold refits the lasso on its training rows, trains the constrained
    inverse on the training Hessian for every candidate radius, and scores it
    with the likelihood loss on the held-out fold's Hessian.  Ties break
    toward the smaller radius.
    """
    n = batch.n
    if folds < 2 or folds > n // 2:
        raise ValueError(f"folds={folds} invalid for {n} observations")
    grid = sorted(float(h) for h in h_candidates)
    scores = {h: 0.0 for h in grid}
    alive = set(grid)
    blocks = np.array_split(np.arange(n), folds)
    for k, val_idx in enumerate(blocks):
        train_idx = np.setdiff1d(np.arange(n), val_idx)
        train = Batch(batch.y[train_idx], batch.x[train_idx], batch.index)
        if lam is None:
            obj = SurrogateObjective(np.zeros(batch.p), None, train, loss,
                                     2.0 * train.n)
            _, beta = select_lambda(obj, bic_cfg or TuningConfig())
        else:
            beta = fit_initial_lasso(train, loss, lam)
        h_train = _empirical_hessian(loss, train.y, train.x, beta)
        h_val = _empirical_hessian(loss, batch.y[val_idx], batch.x[val_idx], beta)
        cands, _ = precision_candidates(h_train, grid, **solver_kw)
        for h in grid:
            if h not in cands:
                alive.discard(h)
            elif h in alive:
                scores[h] += _likelihood_loss(h_val, cands[h].omega)
    finite = [(scores[h] / folds, h) for h in grid
              if h in alive and math.isfinite(scores[h])]
    if not finite:
        raise InfeasibleError("no feasible positive-definite candidate radius")
    # ascending grid scan keeps the smallest radius on ties
    best = min(finite, key=lambda t: t[0])
    return best[1]


def select_h_rolling(prev_candidates: dict[float, PrecisionEstimate],
                     h_current: np.ndarray, raw_scale_n: float | None = None) -> float:
    """Radius whose history-trained estimate best fits the newest Hessian.

    raw_scale_n, when given, applies the raw 2/n_s factor to the trace term.
    """
    if not prev_candidates:
        raise ValueError("no candidate precision estimates")
    factor = 2.0 / raw_scale_n if raw_scale_n else 1.0
    best_h, best_score = None, math.inf
    for h in sorted(prev_candidates):
        score = _likelihood_loss(h_current, prev_candidates[h].omega, factor)
        if score < best_score:
            best_h, best_score = h, score
    if best_h is None:
        raise InfeasibleError("every candidate radius scored +inf (non-PD)")
    return best_h
