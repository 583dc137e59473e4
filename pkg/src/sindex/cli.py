"""Command-line entry point: simulate streams, fit them, aggregate metrics."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .datamodel import load_state, save_state
from .engine import EngineConfig, StreamEngine, pilot_tau
from .losses import HUBER, LOGISTIC, LossSpec
from .simulate import ModelSpec, beta_zero, fpr_tpr, gen_batch, sine_distance
from .streamio import StreamSource, append_log_line, estimate_record, \
    read_manifest, read_run_log, report_to_dict, write_batch_csv, write_manifest
from .tuning import TuningConfig


def _parse_cov(text: str):
    if text == "identity":
        return "identity", 0.5
    if text.startswith("toeplitz"):
        rho = 0.5
        if ":" in text:
            rho = float(text.split(":", 1)[1])
        return "toeplitz", rho
    raise argparse.ArgumentTypeError(f"bad covariance {text!r}")


def _parse_batch_sizes(text: str, m: int):
    sizes = [int(v) for v in text.split(",")]
    if len(sizes) == 1:
        sizes = sizes * m
    if len(sizes) != m:
        raise SystemExit(f"error: {len(sizes)} batch sizes for m={m}")
    return sizes


def cmd_simulate(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: output directory {out} is not empty (use --force)",
              file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    model = "model1" if args.model == 1 else "model2"
    cov, rho = args.cov
    spec = ModelSpec(model, args.p, args.s0, cov, rho, args.error, args.seed)
    sizes = _parse_batch_sizes(args.n_batch, args.m)
    for j, n in enumerate(sizes, start=1):
        batch = gen_batch(spec, n, batch_index=j, replication=args.replication)
        write_batch_csv(batch, out / f"batch_{j:04d}.csv")
    write_manifest(out, {
        "model": model, "p": args.p, "s0": args.s0, "covariance": cov,
        "rho": rho, "error": args.error, "seed": args.seed,
        "replication": args.replication, "batch_sizes": sizes,
        "beta0": [float(v) for v in beta_zero(spec)], "format": 1,
    })
    print(f"wrote {len(sizes)} batches to {out}")
    return 0


def _tuning_from_args(args) -> TuningConfig:
    kw = {}
    if args.h_grid:
        kw["h_grid"] = tuple(float(v) for v in args.h_grid.split(","))
    return TuningConfig(lambda_grid_size=args.lambda_grid_size,
                        lambda_grid_ratio=args.lambda_grid_ratio,
                        bic_c=args.bic_c, cv_folds=args.cv_folds,
                        h_restrict_after=args.h_restrict_after, **kw)


def _infer_steps(text: str):
    if text == "all":
        return "all"
    if text == "none":
        return set()
    return {int(v) for v in text.split(",")}


def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    infer_at = _infer_steps(args.infer_at)
    state_path = Path(args.state_out) if args.state_out else out / "state.bin"

    engine = None
    start_index = 1
    if args.resume:
        state = load_state(args.resume)
        start_index = state.step + 1
        loss = state.loss
        cfg = EngineConfig(loss=loss, alpha=args.alpha,
                           tuning=_tuning_from_args(args),
                           infer_every_step=(infer_at == "all"))
        engine = StreamEngine(cfg, state)
        print(f"resumed at step {state.step} (N={state.n_total})")

    log_path = out / "run.jsonl"
    mode = "a" if args.resume else "w"
    source = StreamSource(args.input, start_index=start_index)
    processed = 0
    try:
        with open(log_path, mode) as log:
            for batch in source:
                if engine is None:
                    if args.loss == HUBER:
                        tau = args.tau if args.tau else pilot_tau(batch)
                        loss = LossSpec(HUBER, tau)
                    else:
                        loss = LossSpec(LOGISTIC)
                    cfg = EngineConfig(
                        loss=loss, alpha=args.alpha,
                        tuning=_tuning_from_args(args),
                        infer_every_step=(infer_at == "all"
                                          or (isinstance(infer_at, set)
                                              and 1 in infer_at)),
                        recalibrate_tau=not args.fix_tau)
                    engine = StreamEngine(cfg)
                state = engine.ingest(batch)
                append_log_line(log, "estimate", estimate_record(
                    state.step, state.n_total,
                    0.5 * (state.beta1 + state.beta2), state.tunings))
                if infer_at == "all" or state.step in infer_at:
                    report = engine.infer()
                    append_log_line(log, "inference", report_to_dict(report))
                log.flush()
                save_state(state, state_path)
                processed += 1
    except Exception as exc:  # keep the partial log and last good state
        print(f"error: {exc}", file=sys.stderr)
        if engine is not None and engine.state is not None:
            save_state(engine.state, state_path)
        return 1
    if engine is None:
        print("error: stream contained no batches", file=sys.stderr)
        return 1
    print(f"processed {processed} batches (through step {engine.state.step}); "
          f"log at {log_path}")
    return 0


def cmd_metrics(args) -> int:
    run_dirs = [Path(d) for d in args.runs]
    expanded = []
    for d in run_dirs:
        if (d / "run.jsonl").exists():
            expanded.append(d)
        else:
            expanded.extend(sorted(p.parent for p in d.glob("*/run.jsonl")))
    if not expanded:
        print("error: no run logs found", file=sys.stderr)
        return 2
    sines, reports = {}, {}
    s0 = None
    for d in expanded:
        manifest = read_manifest(d)
        if s0 is None:
            s0, p_dim = manifest["s0"], manifest["p"]
        elif manifest["s0"] != s0 or manifest["p"] != p_dim:
            print(f"error: manifest mismatch in {d}", file=sys.stderr)
            return 2
        b0 = np.asarray(manifest["beta0"], dtype=float)
        if b0.shape[0] != p_dim:
            print(f"error: beta0 length mismatch in {d}", file=sys.stderr)
            return 2
        est, inf = read_run_log(d / "run.jsonl")
        for step, beta_ave in est.items():
            if beta_ave.shape[0] != p_dim:
                print(f"error: log dimension mismatch in {d}", file=sys.stderr)
                return 2
            if np.any(beta_ave != 0.0):
                sines.setdefault(step, []).append(sine_distance(beta_ave, b0))
        for step, rep in inf.items():
            reports.setdefault(step, []).append(rep)

    rows = [("metric", "step", "value")]
    for step in sorted(sines):
        rows.append(("sine_mean", step, float(np.mean(sines[step]))))
    for step in sorted(reports):
        fpr, tpr = fpr_tpr(reports[step], s0, args.alpha)
        rows.append(("fpr", step, fpr))
        for l, v in enumerate(tpr, start=1):
            rows.append((f"tpr_{l}", step, float(v)))
    writer = csv.writer(open(args.out, "w", newline="") if args.out else sys.stdout)
    writer.writerows(rows)
    if args.out:
        print(f"wrote metrics to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sindex",
                                 description=__doc__.strip())
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic batch stream")
    sim.add_argument("--model", type=int, choices=(1, 2), required=True)
    sim.add_argument("--error", default="gaussian",
                     choices=("gaussian", "lognormal", "t3", "weibull"))
    sim.add_argument("--cov", type=_parse_cov, default=("toeplitz", 0.5),
                     help="identity or toeplitz:RHO (default toeplitz:0.5)")
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--s0", type=int, required=True)
    sim.add_argument("--n-batch", required=True,
                     help="batch size, or comma list of per-batch sizes")
    sim.add_argument("--m", type=int, required=True, help="number of batches")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--replication", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--force", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="run the online engine over a stream")
    fit.add_argument("--in", dest="input", required=True,
                     help="stream directory, or - for stdin")
    fit.add_argument("--loss", choices=(HUBER, LOGISTIC), default=HUBER)
    fit.add_argument("--tau", type=float, default=None,
                     help="initial huber threshold (default: auto pilot)")
    fit.add_argument("--fix-tau", action="store_true",
                     help="disable per-batch tau recalibration")
    fit.add_argument("--alpha", type=float, default=0.05)
    fit.add_argument("--infer-at", default="all",
                     help="comma list of steps, or all / none")
    fit.add_argument("--resume", default=None, help="state file to resume from")
    fit.add_argument("--state-out", default=None)
    fit.add_argument("--out", required=True)
    fit.add_argument("--lambda-grid-size", type=int, default=50)
    fit.add_argument("--lambda-grid-ratio", type=float, default=0.01)
    fit.add_argument("--bic-c", type=float, default=1.0)
    fit.add_argument("--cv-folds", type=int, default=5)
    fit.add_argument("--h-grid", default=None,
                     help="comma list of candidate radii")
    fit.add_argument("--h-restrict-after", type=int, default=None)
    fit.set_defaults(func=cmd_fit)

    met = sub.add_parser("metrics", help="aggregate run logs into a CSV table")
    met.add_argument("--runs", nargs="+", required=True,
                     help="run directories (or parents of them)")
    met.add_argument("--alpha", type=float, default=0.05)
    met.add_argument("--out", default=None)
    met.set_defaults(func=cmd_metrics)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
