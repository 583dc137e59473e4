"""Domain types for streaming single-index estimation and the on-disk state format.

The stream state holds the complete constant-size summary of history: the two
split estimators, accumulated (unnormalized) Hessian sums, the debiasing
correction accumulators, the gradient outer-product sum, the most recent
batch's increments, counters and last tuning choices.  Its size depends only
on the covariate dimension p, never on how much data has been ingested.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import HUBER, LOGISTIC, LossSpec

logger = logging.getLogger("sindex")

_MAGIC = b"SINDEXST"
_VERSION = 1
_HEADER = struct.Struct("<BxxxxxxxdQQQQ")  # kind, tau, p, step, n_total, n_last


@dataclass
class Batch:
    """One arriving block of observations: responses y and covariate rows x."""

    y: np.ndarray
    x: np.ndarray
    index: int = 1

    def __post_init__(self):
        self.y = np.ascontiguousarray(self.y, dtype=float).ravel()
        self.x = np.ascontiguousarray(self.x, dtype=float)
        if self.x.ndim != 2:
            raise ValueError("covariates must be a 2-d array")
        if self.y.shape[0] != self.x.shape[0]:
            raise ValueError(
                f"response length {self.y.shape[0]} != covariate rows {self.x.shape[0]}"
            )
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.x))):
            raise ValueError("batch contains non-finite entries")
        if self.index < 1:
            raise ValueError("batch index must be a positive integer")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass
class SplitBatch:
    """Deterministic halves of a batch: first floor(n/2) rows, then the rest."""

    first: Batch
    second: Batch


def split_batch(batch: Batch) -> SplitBatch:
    n = batch.n
    if n < 2:
        raise ValueError("cannot split a batch with fewer than 2 observations")
    if n % 2:
        logger.warning("batch %d has odd size %d; splitting %d/%d",
                       batch.index, n, n // 2, n - n // 2)
    h = n // 2
    first = Batch(batch.y[:h], batch.x[:h], batch.index)
    second = Batch(batch.y[h:], batch.x[h:], batch.index)
    return SplitBatch(first, second)


@dataclass
class StreamState:
    """Constant-size summary of everything ingested so far.

    Unnormalized conventions: ``hsum1`` is sum_j n_j H1^(j), ``q1`` is the
    split-1 correction accumulator through the current step, ``tsum`` is
    N_s * T_s, and ``h1_last`` / ``g1_last`` are the newest batch's Hessian
    and gradient increments (n_s H1^(s) and n_s grad l1^(s) at the cross
    estimator), kept so inference and the next surrogate can be assembled
    from the state alone.
    """

    loss: LossSpec
    step: int
    n_total: int
    n_last: int
    beta1: np.ndarray
    beta2: np.ndarray
    hsum1: np.ndarray
    hsum2: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    tsum: np.ndarray
    h1_last: np.ndarray
    h2_last: np.ndarray
    g1_last: np.ndarray
    g2_last: np.ndarray
    tunings: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.beta1.shape[0]

    def copy(self) -> "StreamState":
        arrays = {
            name: getattr(self, name).copy()
            for name in ("beta1", "beta2", "hsum1", "hsum2", "q1", "q2",
                         "tsum", "h1_last", "h2_last", "g1_last", "g2_last")
        }
        return replace(self, tunings=dict(self.tunings), **arrays)

    def nbytes(self) -> int:
        """Array footprint of the summary; independent of n_total by design."""
        return sum(
            getattr(self, name).nbytes
            for name in ("beta1", "beta2", "hsum1", "hsum2", "q1", "q2",
                         "tsum", "h1_last", "h2_last", "g1_last", "g2_last")
        )

    def validate(self):
        p = self.p
        vecs = ("beta1", "beta2", "q1", "q2", "g1_last", "g2_last")
        mats = ("hsum1", "hsum2", "tsum", "h1_last", "h2_last")
        for name in vecs:
            if getattr(self, name).shape != (p,):
                raise ValueError(f"{name} has wrong shape")
        for name in mats:
            m = getattr(self, name)
            if m.shape != (p, p):
                raise ValueError(f"{name} has wrong shape")
            if not np.array_equal(m, m.T):
                raise ValueError(f"state invariant violation: {name} is not symmetric")
        if self.step < 1:
            raise ValueError("state must contain at least one ingested batch")
        if not (0 < self.n_last <= self.n_total):
            raise ValueError("inconsistent sample counters")


@dataclass
class InferenceReport:
    """Per-coordinate debiased estimates with standard errors, CIs and p-values."""

    step: int
    n_total: int
    alpha: float
    beta_ave: np.ndarray
    beta_d1: np.ndarray
    beta_d2: np.ndarray
    beta_da: np.ndarray
    sigma: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    p_values: np.ndarray
    tunings: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.beta_da.shape[0]


_STATE_VECS = ("beta1", "beta2", "q1", "q2", "g1_last", "g2_last")
_STATE_MATS = ("hsum1", "hsum2", "tsum", "h1_last", "h2_last")


def save_state(state: StreamState, path) -> None:
    """Serialize a stream state; float fields roundtrip bit-exactly.

    Layout (little-endian): 8-byte magic ``SINDEXST``, u32 format version,
    header (loss kind u8, tau f64 with NaN meaning absent, p/step/n_total/
    n_last u64), u64-length-prefixed JSON tunings blob, then the arrays as
    raw f64 in the fixed order beta1, beta2, q1, q2, g1_last, g2_last,
    hsum1, hsum2, tsum, h1_last, h2_last.
    """
    state.validate()
    kind = 0 if state.loss.kind == HUBER else 1
    tau = state.loss.tau if state.loss.tau is not None else float("nan")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    buf.write(_HEADER.pack(kind, tau, state.p, state.step,
                           state.n_total, state.n_last))
    blob = json.dumps(state.tunings, sort_keys=True).encode()
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for name in _STATE_VECS + _STATE_MATS:
        arr = np.ascontiguousarray(getattr(state, name), dtype="<f8")
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_state(path) -> StreamState:
    """Read a state written by :func:`save_state`, validating its invariants."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a sindex state file")
    off = 8
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported state format version {version}")
    kind, tau, p, step, n_total, n_last = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    (blob_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    if off + blob_len > len(data):
        raise ValueError(f"{path}: truncated state file")
    tunings = json.loads(data[off:off + blob_len].decode())
    off += blob_len
    expected = off + 8 * (6 * p + 5 * p * p)
    if len(data) != expected:
        raise ValueError(
            f"{path}: file length {len(data)} does not match header "
            f"dimensions (expected {expected})"
        )
    arrays = {}
    for name in _STATE_VECS:
        arrays[name] = np.frombuffer(data, dtype="<f8", count=p, offset=off).copy()
        off += 8 * p
    for name in _STATE_MATS:
        arrays[name] = (
            np.frombuffer(data, dtype="<f8", count=p * p, offset=off)
            .reshape(p, p).copy()
        )
        off += 8 * p * p
    loss = LossSpec(HUBER, tau) if kind == 0 else LossSpec(LOGISTIC)
    state = StreamState(loss=loss, step=step, n_total=n_total, n_last=n_last,
                        tunings=tunings, **arrays)
    state.validate()
    return state
