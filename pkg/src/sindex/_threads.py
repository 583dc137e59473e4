"""BLAS threading control for the iterative solvers.

The solver loops interleave small BLAS calls with elementwise array work;
multithreaded BLAS worker spin-up dominates at these sizes (observed >10x
slowdowns), so the hot loops run under a single-threaded BLAS context.
"""

from __future__ import annotations

import contextlib

try:
    from threadpoolctl import threadpool_limits

    def serial_blas():
        return threadpool_limits(limits=1, user_api="blas")
except ImportError:  # pragma: no cover - threadpoolctl is a hard dependency
    def serial_blas():
        return contextlib.nullcontext()
