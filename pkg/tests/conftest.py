"""Shared fixtures: compiled-kernel warm-up and synthetic instances."""

from __future__ import annotations

import numpy as np
import pytest


@pytest.fixture(scope="session")
def warm_kernels():
    """Compile every jit kernel once so timed tests measure steady state."""
    from descsearch.lsq import RANK_TOL_FACTOR, fill_combinations, fit_tuple_kernel, score_tuples

    for dtype, prec in ((np.float64, "fp64"), (np.float32, "fp32")):
        vals = np.asarray(np.arange(40).reshape(4, 10) + 0.5, dtype=dtype)
        y = np.asarray(np.arange(10), dtype=dtype)
        bounds = np.array([0, 10], dtype=np.int64)
        tuples = np.array([[0, 1], [1, 2]], dtype=np.int64)
        out = np.empty(2, dtype=np.float64)
        score_tuples(vals, y, bounds, tuples, RANK_TOL_FACTOR[prec], out)
        coef = np.empty((1, 3), dtype=dtype)
        ssr = np.empty(1, dtype=np.float64)
        fit_tuple_kernel(vals, y, bounds, np.array([0, 1], dtype=np.int64), RANK_TOL_FACTOR[prec], coef, ssr)
    cur = np.array([0, 1], dtype=np.int64)
    buf = np.empty((3, 2), dtype=np.int64)
    fill_combinations(cur, 4, buf, 3)
    return True


@pytest.fixture()
def rng():
    return np.random.default_rng(20260822)
