"""Small shared helpers: thread budgeting and rank counting."""

from __future__ import annotations

import os

import numpy as np

THREADS_ENV_VAR = "FCMLAB_THREADS"


def thread_count(n_jobs: int) -> int:
    """Number of worker threads to use for ``n_jobs`` independent tasks.

    Respects the ``FCMLAB_THREADS`` environment variable as a hard cap;
    unset or unparsable values fall back to the CPU count.
    """
    cap = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is not None:
        try:
            cap = int(raw)
        except ValueError:
            cap = os.cpu_count() or 1
    return max(1, min(cap, n_jobs))


def numerical_rank(values: np.ndarray, tol: float) -> int:
    """Count entries of a nonnegative spectrum at or above ``tol`` times its max.

    ``values`` may arrive in any order; nonpositive spectra have rank 0.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0
    top = float(values.max())
    if top <= 0.0:
        return 0
    return int(np.count_nonzero(values >= tol * top))
