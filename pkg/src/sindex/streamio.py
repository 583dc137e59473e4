"""Batch ingestion, report serialization, run logs and manifests.

Batches travel as CSV with header ``y,x1,...,xp``.  A stream is either a
directory of such files consumed in lexicographic order, or standard input
carrying blank-line-separated CSV blocks (each with its own header).
Reports are JSON documents; a run log is one JSON object per line, either an
"estimate" record (written every step) or a full "inference" record.
Floats are serialized with shortest-roundtrip precision, so parsed values
equal the originals bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

import numpy as np

from .datamodel import Batch, InferenceReport

MANIFEST_NAME = "manifest.json"


def _expected_header(p: int):
    return ["y"] + [f"x{i}" for i in range(1, p + 1)]


def write_batch_csv(batch: Batch, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_expected_header(batch.p))
        for i in range(batch.n):
            writer.writerow([repr(float(batch.y[i]))]
                            + [repr(float(v)) for v in batch.x[i]])


def _parse_rows(rows, origin: str, expect_p: int | None, index: int) -> Batch | None:
    header = None
    y, xs = [], []
    for lineno, row in rows:
        if not row:
            continue
        if header is None:
            header = [c.strip() for c in row]
            p = len(header) - 1
            if p < 1 or header != _expected_header(p):
                raise ValueError(f"{origin}:{lineno}: bad header {header!r}")
            if expect_p is not None and p != expect_p:
                raise ValueError(
                    f"{origin}:{lineno}: schema drift, expected p={expect_p}, got {p}"
                )
            continue
        if len(row) != len(header):
            raise ValueError(f"{origin}:{lineno}: expected {len(header)} fields, "
                             f"got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise ValueError(f"{origin}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"{origin}:{lineno}: non-finite value")
        y.append(vals[0])
        xs.append(vals[1:])
    if header is None:
        return None  # empty file: end of stream
    if not y:
        raise ValueError(f"{origin}: header without observations")
    return Batch(np.asarray(y), np.asarray(xs), index)


def read_batch_csv(path, expect_p: int | None = None, index: int = 1) -> Batch | None:
    """Parse one batch file; None signals an empty file (end of stream)."""
    with open(path, newline="") as fh:
        rows = ((i, row) for i, row in enumerate(csv.reader(fh), start=1))
        return _parse_rows(rows, str(path), expect_p, index)


class StreamSource:
    """Ordered batch supplier from a directory of CSV files or standard input."""

    def __init__(self, location, start_index: int = 1):
        self.location = location
        self.start_index = start_index

    def __iter__(self):
        if self.location == "-":
            yield from self._iter_stdin()
        else:
            yield from self._iter_directory()

    def _iter_directory(self):
        root = Path(self.location)
        if not root.is_dir():
            raise FileNotFoundError(f"stream directory {root} does not exist")
        files = sorted(fn for fn in os.listdir(root)
                       if fn.endswith(".csv") and not fn.startswith("."))
        p = None
        index = self.start_index
        for pos, fn in enumerate(files, start=1):
            if pos < self.start_index:
                continue
            batch = read_batch_csv(root / fn, expect_p=p, index=index)
            if batch is None:
                return
            p = batch.p
            index += 1
            yield batch

    def _iter_stdin(self):
        import sys
        p = None
        index = self.start_index
        block: list[tuple[int, list]] = []
        lineno = 0
        skipped = 0

        def flush(block):
            nonlocal p, index, skipped
            if not block:
                return None
            if skipped < self.start_index - 1:
                skipped += 1
                return None
            batch = _parse_rows(iter(block), "<stdin>", p, index)
            if batch is not None:
                p = batch.p
                index += 1
            return batch

        for line in sys.stdin:
            lineno += 1
            if line.strip() == "":
                batch = flush(block)
                block = []
                if batch is not None:
                    yield batch
                continue
            block.append((lineno, next(csv.reader(io.StringIO(line)))))
        batch = flush(block)
        if batch is not None:
            yield batch


def report_to_dict(report: InferenceReport) -> dict:
    per = []
    for l in range(report.p):
        per.append({
            "index": l + 1,
            "beta_ave": float(report.beta_ave[l]),
            "beta_d1": float(report.beta_d1[l]),
            "beta_d2": float(report.beta_d2[l]),
            "beta_da": float(report.beta_da[l]),
            "sigma": float(report.sigma[l]),
            "ci_lo": float(report.ci_lo[l]),
            "ci_hi": float(report.ci_hi[l]),
            "p_value": float(report.p_values[l]),
        })
    return {
        "step": report.step,
        "n_total": report.n_total,
        "alpha": report.alpha,
        "per_coordinate": per,
        "tunings": report.tunings,
    }


def report_from_dict(doc: dict) -> InferenceReport:
    per = doc["per_coordinate"]
    cols = {k: np.array([row[k] for row in per])
            for k in ("beta_ave", "beta_d1", "beta_d2", "beta_da",
                      "sigma", "ci_lo", "ci_hi", "p_value")}
    return InferenceReport(
        step=doc["step"], n_total=doc["n_total"], alpha=doc["alpha"],
        beta_ave=cols["beta_ave"], beta_d1=cols["beta_d1"],
        beta_d2=cols["beta_d2"], beta_da=cols["beta_da"], sigma=cols["sigma"],
        ci_lo=cols["ci_lo"], ci_hi=cols["ci_hi"], p_values=cols["p_value"],
        tunings=doc.get("tunings", {}),
    )


def write_report(report: InferenceReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh)
        fh.write("\n")


def load_report(path) -> InferenceReport:
    with open(path) as fh:
        return report_from_dict(json.load(fh))


def append_log_line(fh, kind: str, payload: dict) -> None:
    fh.write(json.dumps({"type": kind, **payload}) + "\n")


def estimate_record(step: int, n_total: int, beta_ave, tunings: dict) -> dict:
    return {"step": step, "n_total": n_total,
            "beta_ave": [float(v) for v in beta_ave], "tunings": tunings}


def read_run_log(path):
    """Split a run log into per-step estimate records and inference reports."""
    estimates, inferences = {}, {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            if doc.get("type") == "estimate":
                estimates[doc["step"]] = np.asarray(doc["beta_ave"], dtype=float)
            elif doc.get("type") == "inference":
                inferences[doc["step"]] = report_from_dict(doc)
    return estimates, inferences


def write_manifest(path_dir, doc: dict) -> None:
    with open(Path(path_dir) / MANIFEST_NAME, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_manifest(path_dir) -> dict:
    with open(Path(path_dir) / MANIFEST_NAME) as fh:
        return json.load(fh)
