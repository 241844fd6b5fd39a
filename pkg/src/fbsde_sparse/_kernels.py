"""Compiled inner loops for interpolant evaluation.

Each output element is accumulated sequentially by a single thread, so
results are bitwise identical for any thread count; only the distribution
of points over threads changes.
"""

import numpy as np  # noqa: F401  (numba needs the module at compile time)
from numba import njit, prange


@njit(cache=True, parallel=True)
def table_kernel(t, pair, out):
    """1D hierarchical basis tables: out[d, i, k] = basis_k(t[d, i]).

    Runs the Chebyshev three-term recurrence per point, then folds
    ``T_k - T_(pair[k])`` in descending k so the subtrahend is still the
    plain polynomial value.
    """
    q, n = t.shape
    kmax = out.shape[2] - 1
    for d in range(q):
        for i in prange(n):
            out[d, i, 0] = 1.0
            if kmax >= 1:
                out[d, i, 1] = t[d, i]
            for k in range(2, kmax + 1):
                out[d, i, k] = 2.0 * t[d, i] * out[d, i, k - 1] - out[d, i, k - 2]
            for k in range(kmax, 2, -1):
                p = pair[k]
                if p >= 0:
                    out[d, i, k] -= out[d, i, p]


@njit(cache=True, parallel=True)
def eval_kernel(tabs, idx, coeffs, out):
    """out[i, :] += sum_c coeffs[c, :] * prod_d tabs[d, i, idx[c, d]]."""
    n = tabs.shape[1]
    ncoef = idx.shape[0]
    q = idx.shape[1]
    m = coeffs.shape[1]
    for i in prange(n):
        for c in range(ncoef):
            prod = 1.0
            for d in range(q):
                prod *= tabs[d, i, idx[c, d]]
            for j in range(m):
                out[i, j] += prod * coeffs[c, j]
