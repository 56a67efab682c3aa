"""Single-threaded execution for bitwise-reproducible runs.

BLAS backends may split reductions across threads; limiting every pool to
one thread pins the summation order, which is what the bitwise determinism
guarantees assume.
"""

from __future__ import annotations

from contextlib import contextmanager


@contextmanager
def single_threaded():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - dependency is declared
        yield
        return
    with threadpool_limits(limits=1):
        yield
