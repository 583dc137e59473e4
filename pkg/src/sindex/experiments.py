"""Replication driver for the simulation studies.

One replication simulates a stream, runs the engine over it, and returns a
compact record: sine distances of the averaged estimator at every step and,
for the requested inference steps, the p-values and interval endpoints.
Replications are independent and run in parallel processes; results are
cached as JSON keyed by a hash of the study configuration so repeated
aggregation is cheap.  The SINDEX_THREADS environment variable caps the
worker count.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .engine import EngineConfig, StreamEngine, pilot_tau
from .losses import HUBER, LOGISTIC, LossSpec
from .simulate import ModelSpec, beta_zero, gen_batch, sine_distance
from .tuning import TuningConfig


@dataclass(frozen=True)
class StudyConfig:
    model: str
    p: int
    s0: int
    m: int
    n_batch: int
    covariance: str = "toeplitz"
    rho: float = 0.5
    error: str = "gaussian"
    loss: str = HUBER
    alpha: float = 0.05
    seed: int = 0
    infer_at: tuple = ()
    lambda_grid_size: int = 50
    lambda_grid_ratio: float = 0.01
    h_grid: tuple = ()
    h_restrict_after: int | None = 3
    cv_folds: int = 5
    bic_c: float = 1.0

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.model, self.p, self.s0, self.covariance,
                         self.rho, self.error, self.seed)

    def tuning(self) -> TuningConfig:
        kw = dict(lambda_grid_size=self.lambda_grid_size,
                  lambda_grid_ratio=self.lambda_grid_ratio,
                  h_restrict_after=self.h_restrict_after,
                  cv_folds=self.cv_folds, bic_c=self.bic_c)
        if self.h_grid:
            kw["h_grid"] = self.h_grid
        return TuningConfig(**kw)


def _engine_config(cfg: StudyConfig, first_batch) -> EngineConfig:
    if cfg.loss == HUBER:
        loss = LossSpec(HUBER, pilot_tau(first_batch))
    else:
        loss = LossSpec(LOGISTIC)
    return EngineConfig(loss=loss, alpha=cfg.alpha, tuning=cfg.tuning(),
                        infer_every_step=(1 in cfg.infer_at))


def _pack_report(report) -> dict:
    return {
        "p_values": [float(v) for v in report.p_values],
        "ci_lo": [float(v) for v in report.ci_lo],
        "ci_hi": [float(v) for v in report.ci_hi],
        "tunings": report.tunings,
    }


def run_replication(cfg: StudyConfig, rep: int) -> dict:
    """Simulate one stream and run the engine; returns a JSON-able record."""
    mspec = cfg.model_spec()
    b0 = beta_zero(mspec)
    infer = set(cfg.infer_at)
    engine = None
    sine, reports = {}, {}
    for j in range(1, cfg.m + 1):
        batch = gen_batch(mspec, cfg.n_batch, batch_index=j, replication=rep)
        if engine is None:
            engine = StreamEngine(_engine_config(cfg, batch))
        engine.ingest(batch)
        ave = 0.5 * (engine.state.beta1 + engine.state.beta2)
        try:
            sine[str(j)] = sine_distance(ave, b0)
        except ValueError:
            sine[str(j)] = None  # estimator collapsed to zero at this step
        if j in infer:
            try:
                reports[str(j)] = _pack_report(engine.infer())
            except Exception as exc:  # failed replication step, kept as data
                reports[str(j)] = {"error": f"{type(exc).__name__}: {exc}"}
    return {"rep": rep, "sine": sine, "reports": reports}


def run_final_batch_inference(cfg: StudyConfig, rep: int) -> dict:
    """Single-batch run on the stream's last batch (the final-deb comparator)."""
    mspec = cfg.model_spec()
    batch = gen_batch(mspec, cfg.n_batch, batch_index=cfg.m, replication=rep)
    ecfg = _engine_config(cfg, batch)
    ecfg.infer_every_step = True
    engine = StreamEngine(ecfg)
    engine.ingest(batch)
    return {"rep": rep, "reports": {"1": _pack_report(engine.infer())}}


def _worker(args):
    cfg_dict, rep, final = args
    cfg = StudyConfig(**{**cfg_dict,
                         "infer_at": tuple(cfg_dict["infer_at"]),
                         "h_grid": tuple(cfg_dict["h_grid"])})
    fn = run_final_batch_inference if final else run_replication
    return fn(cfg, rep)


def default_workers() -> int:
    env = os.environ.get("SINDEX_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def run_study(cfg: StudyConfig, n_reps: int, cache_dir=None, workers=None,
              final_batch: bool = False) -> list[dict]:
    """Run (or load from cache) n_reps independent replications."""
    key_doc = json.loads(json.dumps({"config": asdict(cfg), "final": final_batch}))
    key = hashlib.sha1(json.dumps(key_doc, sort_keys=True).encode()).hexdigest()[:16]
    cache = None
    if cache_dir is not None:
        cache = Path(cache_dir) / f"study_{key}.json"
        if cache.exists():
            with open(cache) as fh:
                doc = json.load(fh)
            if doc["key"] == key_doc and len(doc["results"]) >= n_reps:
                return doc["results"][:n_reps]
    workers = workers or default_workers()
    tasks = [(asdict(cfg), rep, final_batch) for rep in range(n_reps)]
    if workers == 1:
        results = [_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, tasks))
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        with open(cache, "w") as fh:
            json.dump({"key": key_doc, "results": results}, fh)
    return results


def mean_sine(results, step: int) -> float:
    vals = [r["sine"][str(step)] for r in results]
    vals = [v for v in vals if v is not None]
    if not vals:
        raise ValueError(f"no usable replications at step {step}")
    return float(np.mean(vals))


def valid_reports(results, step: int):
    return [r["reports"][str(step)] for r in results
            if "p_values" in r["reports"].get(str(step), {})]


def study_fpr_tpr(results, step: int, s0: int, alpha: float):
    from .simulate import fpr_tpr
    pvs = [np.asarray(rep["p_values"]) for rep in valid_reports(results, step)]
    return fpr_tpr(pvs, s0, alpha)


def coverage(results, step: int, coord: int, truth: float = 0.0) -> float:
    """Fraction of replications whose interval for ``coord`` covers ``truth``."""
    hits = [rep["ci_lo"][coord] <= truth <= rep["ci_hi"][coord]
            for rep in valid_reports(results, step)]
    if not hits:
        raise ValueError(f"no valid inference reports at step {step}")
    return float(np.mean(hits))
