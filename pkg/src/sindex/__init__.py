"""Streaming estimation and pointwise inference for high-dimensional
single-index models under convex losses."""

from .datamodel import Batch, InferenceReport, SplitBatch, StreamState, \
    load_state, save_state, split_batch
from .debias import DebiasInputs, confidence_interval, debias_estimates, \
    estimate_variance, normal_upper_quantile, p_value
from .engine import EngineConfig, StreamEngine, init_stream, pilot_tau, \
    run_inference, update_stream
from .lasso import SurrogateObjective, fit_initial_lasso, fit_online_lasso, \
    kkt_residual, soft_threshold
from .losses import HUBER, LOGISTIC, LossSpec, hessian_weight, loss_score, \
    loss_value, select_tau
from .precision import ClimeSolver, InfeasibleError, PrecisionEstimate, \
    estimate_precision, estimate_precision_column, symmetrize_min_magnitude
from .simulate import ModelSpec, beta_zero, fpr_tpr, gen_batch, sine_distance
from .tuning import TuningConfig, modified_bic, select_h_first_batch, \
    select_h_rolling, select_lambda

__version__ = "0.1.0"

__all__ = [
    "Batch", "SplitBatch", "StreamState", "InferenceReport",
    "split_batch", "save_state", "load_state",
    "LossSpec", "HUBER", "LOGISTIC", "loss_value", "loss_score",
    "hessian_weight", "select_tau",
    "SurrogateObjective", "soft_threshold", "fit_initial_lasso",
    "fit_online_lasso", "kkt_residual",
    "PrecisionEstimate", "ClimeSolver", "InfeasibleError",
    "estimate_precision", "estimate_precision_column",
    "symmetrize_min_magnitude",
    "DebiasInputs", "debias_estimates", "estimate_variance",
    "confidence_interval", "p_value", "normal_upper_quantile",
    "TuningConfig", "modified_bic", "select_lambda",
    "select_h_first_batch", "select_h_rolling",
    "EngineConfig", "StreamEngine", "init_stream", "update_stream",
    "run_inference", "pilot_tau",
    "ModelSpec", "gen_batch", "beta_zero", "sine_distance", "fpr_tpr",
]
