"""Stream orchestration: batch ingestion, summary updates and inference.

Ingestion keeps the constant-size summary exact: each step fits the two
split lassos against the quadratic history surrogate, rebuilds the Hessian,
gradient and outer-product increments at the fresh cross-fitted estimates,
then folds them into the accumulators and drops the raw batch.  Inference is
a pure function of the stored state: it selects the precision radii (rolling
recalibration, or the first-batch cross-validation choice at step 1), solves
the constrained-l1 inverse on each accumulated Hessian, and emits debiased
estimates with standard errors, intervals and p-values.

The quadratic history term is anchored at the effective center solving
hsum @ mu = q, which reproduces the per-batch second-order expansion of the
pooled historical loss; with quadratic losses the surrogate then matches the
pooled objective exactly (up to constants).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Batch, InferenceReport, StreamState, split_batch
from .debias import DebiasInputs, confidence_interval, debias_estimates, \
    estimate_variance, p_value
from .lasso import SurrogateObjective
from .losses import HUBER, LossSpec, hessian_weight, loss_score, select_tau
from .precision import ClimeSolver, estimate_precision
from .tuning import TuningConfig, restrict_grid, rolling_candidate_scan, \
    select_h_first_batch, select_h_rolling, select_lambda

logger = logging.getLogger("sindex")


@dataclass
class EngineConfig:
    loss: LossSpec
    alpha: float = 0.05
    tuning: TuningConfig = field(default_factory=TuningConfig)
    infer_every_step: bool = True
    seed: int = 0
    tau_coverage: float = 0.8
    recalibrate_tau: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")


def pilot_tau(batch: Batch, coverage: float = 0.8) -> float:
    """Scale-free starting threshold from centered responses."""
    return select_tau(batch.y - np.median(batch.y), coverage)


def _half_increments(loss: LossSpec, half: Batch, beta):
    """(2 sum w x x', 2 sum score x, sum score^2 x x') on one half at beta."""
    eta = half.x @ beta
    w = hessian_weight(loss, half.y, eta)
    s = loss_score(loss, half.y, eta)
    h = 2.0 * ((half.x.T * w) @ half.x)
    h = 0.5 * (h + h.T)
    g = 2.0 * (half.x.T @ s)
    t = (half.x.T * (s * s)) @ half.x
    t = 0.5 * (t + t.T)
    return h, g, t


def _effective_center(hsum: np.ndarray, q: np.ndarray) -> np.ndarray:
    # minimum-norm solution of hsum @ mu = q; q lies in range(hsum) by
    # construction, so the quadratic reproduces the pooled history exactly
    return np.linalg.lstsq(hsum, q, rcond=None)[0]


def _step_loss(state_loss: LossSpec, cfg: EngineConfig, residuals,
               prev_tau: float | None) -> LossSpec:
    if state_loss.kind != HUBER or not cfg.recalibrate_tau:
        return state_loss
    try:
        return state_loss.with_tau(select_tau(residuals, cfg.tau_coverage))
    except ValueError:
        logger.warning("tau recalibration degenerate; keeping tau=%g", prev_tau)
        return state_loss


def init_stream(batch1: Batch, cfg: EngineConfig) -> StreamState:
    """First-batch initialization: split fits, summaries, and radius CV."""
    if batch1.n < 4:
        raise ValueError("first batch needs at least 4 observations")
    halves = split_batch(batch1)
    n1 = batch1.n
    loss0 = cfg.loss
    p = batch1.p

    obj1 = SurrogateObjective(np.zeros(p), None, halves.first, loss0, float(n1))
    lam1, beta1 = select_lambda(obj1, cfg.tuning)
    obj2 = SurrogateObjective(np.zeros(p), None, halves.second, loss0, float(n1))
    gam1, beta2 = select_lambda(obj2, cfg.tuning)

    loss1 = _step_loss(loss0, cfg,
                       batch1.y - batch1.x @ (0.5 * (beta1 + beta2)),
                       loss0.tau)

    h1, g1, t1 = _half_increments(loss1, halves.first, beta2)
    h2, g2, t2 = _half_increments(loss1, halves.second, beta1)
    tunings = {"lambda": lam1, "gamma": gam1}
    if loss1.kind == HUBER:
        tunings["tau"] = loss1.tau
    if cfg.infer_every_step:
        tunings["h"] = select_h_first_batch(cfg.tuning.h_grid, halves.first,
                                            loss1, cfg.tuning.cv_folds, lam=lam1)
        tunings["kappa"] = select_h_first_batch(cfg.tuning.h_grid, halves.second,
                                                loss1, cfg.tuning.cv_folds, lam=gam1)
    return StreamState(
        loss=loss1, step=1, n_total=n1, n_last=n1,
        beta1=beta1, beta2=beta2,
        hsum1=h1.copy(), hsum2=h2.copy(),
        q1=h1 @ beta2 - g1, q2=h2 @ beta1 - g2,
        tsum=t1 + t2,
        h1_last=h1, h2_last=h2, g1_last=g1, g2_last=g2,
        tunings=tunings,
    )


def update_stream(state: StreamState, batch: Batch, cfg: EngineConfig) -> StreamState:
    """Ingest one batch and return the refreshed state (input left untouched).

    Order matters: both split estimates are computed before any accumulator
    is touched, because the step-s correction and outer-product increments
    are evaluated at the fresh cross-fitted estimates.
    """
    if batch.p != state.p:
        raise ValueError(f"batch dimension {batch.p} != stream dimension {state.p}")
    if batch.n < 2:
        raise ValueError("update batch needs at least 2 observations")
    n_s = batch.n
    n_total = state.n_total + n_s
    loss_s = _step_loss(state.loss, cfg,
                        batch.y - batch.x @ (0.5 * (state.beta1 + state.beta2)),
                        state.loss.tau)
    halves = split_batch(batch)

    obj1 = SurrogateObjective(_effective_center(state.hsum1, state.q1),
                              state.hsum1, halves.first, loss_s, float(n_total))
    lam_s, beta1 = select_lambda(obj1, cfg.tuning)
    obj2 = SurrogateObjective(_effective_center(state.hsum2, state.q2),
                              state.hsum2, halves.second, loss_s, float(n_total))
    gam_s, beta2 = select_lambda(obj2, cfg.tuning)

    h1, g1, t1 = _half_increments(loss_s, halves.first, beta2)
    h2, g2, t2 = _half_increments(loss_s, halves.second, beta1)

    tunings = {"lambda": lam_s, "gamma": gam_s}
    if loss_s.kind == HUBER:
        tunings["tau"] = loss_s.tau
    for key in ("h", "kappa"):
        if key in state.tunings:
            tunings[key] = state.tunings[key]
    return StreamState(
        loss=loss_s, step=state.step + 1, n_total=n_total, n_last=n_s,
        beta1=beta1, beta2=beta2,
        hsum1=state.hsum1 + h1, hsum2=state.hsum2 + h2,
        q1=state.q1 + h1 @ beta2 - g1, q2=state.q2 + h2 @ beta1 - g2,
        tsum=state.tsum + t1 + t2,
        h1_last=h1, h2_last=h2, g1_last=g1, g2_last=g2,
        tunings=tunings,
    )


def _select_radius(state: StreamState, cfg: EngineConfig, split: int):
    """Rolling radius choice plus warm-startable candidates for one split."""
    hsum = state.hsum1 if split == 1 else state.hsum2
    h_last = state.h1_last if split == 1 else state.h2_last
    key = "h" if split == 1 else "kappa"
    n_prev = state.n_total - state.n_last
    grid = cfg.tuning.h_grid
    if (cfg.tuning.h_restrict_after is not None
            and state.step > cfg.tuning.h_restrict_after
            and state.tunings.get(key) is not None):
        grid = restrict_grid(grid, state.tunings[key], cfg.tuning.h_restrict_width)
    h_val = h_last / state.n_last
    factor = 2.0 / state.n_last if cfg.tuning.rolling_raw_scale else 1.0
    cands, states, _ = rolling_candidate_scan((hsum - h_last) / n_prev, grid,
                                              h_val, trace_factor=factor)
    raw = state.n_last if cfg.tuning.rolling_raw_scale else None
    h_sel = select_h_rolling(cands, h_val, raw_scale_n=raw)
    # hand the final solve a primal-only warm start: its Hessian differs
    warm = states[h_sel].w if h_sel in states else None
    return h_sel, warm


def run_inference(state: StreamState, cfg: EngineConfig) -> InferenceReport:
    """Debiased estimates, standard errors, intervals and p-values at step s.

    Pure in the state: repeated calls return identical reports.
    """
    n_total = float(state.n_total)
    if state.step == 1:
        h_sel = state.tunings.get("h")
        k_sel = state.tunings.get("kappa")
        if h_sel is None or k_sel is None:
            raise ValueError(
                "step-1 inference needs the first-batch radius CV; "
                "initialize the stream with infer_every_step=True"
            )
        warm1 = warm2 = None
    else:
        h_sel, warm1 = _select_radius(state, cfg, 1)
        k_sel, warm2 = _select_radius(state, cfg, 2)

    omega1 = estimate_precision(state.hsum1 / n_total, h_sel,
                                solver=ClimeSolver(state.hsum1 / n_total),
                                warm=warm1)
    omega2 = estimate_precision(state.hsum2 / n_total, k_sel,
                                solver=ClimeSolver(state.hsum2 / n_total),
                                warm=warm2)

    inputs = DebiasInputs(
        beta1=state.beta1, beta2=state.beta2,
        hsum1_prev=state.hsum1 - state.h1_last,
        hsum2_prev=state.hsum2 - state.h2_last,
        q1_prev=state.q1 - (state.h1_last @ state.beta2 - state.g1_last),
        q2_prev=state.q2 - (state.h2_last @ state.beta1 - state.g2_last),
        grad1_step=state.g1_last, grad2_step=state.g2_last,
        omega1=omega1, omega2=omega2,
        tsum=state.tsum, n_total=n_total,
    )
    beta_d1, beta_d2, beta_da = debias_estimates(inputs)
    sigma = np.sqrt(estimate_variance(omega1, omega2, state.tsum, n_total))
    ci_lo, ci_hi = confidence_interval(beta_da, sigma, n_total, cfg.alpha)
    pv = p_value(beta_da, sigma, n_total)
    tunings = dict(state.tunings)
    tunings["h"] = h_sel
    tunings["kappa"] = k_sel
    return InferenceReport(
        step=state.step, n_total=state.n_total, alpha=cfg.alpha,
        beta_ave=0.5 * (state.beta1 + state.beta2),
        beta_d1=beta_d1, beta_d2=beta_d2, beta_da=beta_da,
        sigma=sigma, ci_lo=ci_lo, ci_hi=ci_hi, p_values=pv,
        tunings=tunings,
    )


class StreamEngine:
    """Single-writer wrapper: owns one state and sequences updates.

    A failed update raises and leaves the held state unchanged
    (updates build a fresh state before replacing the reference).
    """

    def __init__(self, cfg: EngineConfig, state: StreamState | None = None):
        self.cfg = cfg
        self.state = state

    def ingest(self, batch: Batch) -> StreamState:
        if self.state is None:
            self.state = init_stream(batch, self.cfg)
        else:
            self.state = update_stream(self.state, batch, self.cfg)
        return self.state

    def infer(self) -> InferenceReport:
        if self.state is None:
            raise ValueError("no batches ingested yet")
        report = run_inference(self.state, self.cfg)
        # record the radius winners so later steps can restrict their grids
        self.state.tunings["h"] = report.tunings["h"]
        self.state.tunings["kappa"] = report.tunings["kappa"]
        return report

    def process(self, batch: Batch, infer: bool | None = None):
        """Ingest, then optionally infer; returns the report or None."""
        self.ingest(batch)
        if infer is None:
            infer = self.cfg.infer_every_step
        return self.infer() if infer else None
