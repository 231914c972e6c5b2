"""Householder-QR least squares, in two forms.

householder_qr is a plain numpy reference factorization used for
diagnostics and tests. The compiled kernels below are what the
exhaustive search runs: each candidate feature tuple gets its own small
scratch matrix [features | ones | property], factorized in place by
Householder reflections, with the residual sum of squares read off the
transformed right-hand side and coefficients recovered by back
substitution. One tuple never touches another tuple's scratch, so
results are independent of batch shape and thread count. The kernels
release the GIL and are compiled per dtype (float32 and float64 paths).

Near-singular systems are flagged by comparing each diagonal of R
against the largest one; callers pass a tolerance factor matched to the
working precision (RANK_TOL_FACTOR).
"""

from __future__ import annotations

import numpy as np
from numba import njit

RANK_TOL_FACTOR = {"fp64": 1e-10, "fp32": 1e-5}


def householder_qr(A: np.ndarray):
    """Thin QR of A (s, p), s >= p. Returns (Q, R) with Q (s, p)
    orthonormal-columned and R (p, p) upper triangular, A = Q @ R."""
    A = np.asarray(A, dtype=np.float64)
    s, p = A.shape
    if s < p:
        raise ValueError("need at least as many rows as columns")
    R = A.copy()
    vs = []
    for j in range(p):
        x = R[j:, j]
        nrm = np.sqrt(x @ x)
        v = x.copy()
        if nrm == 0.0:
            vs.append(None)
            continue
        alpha = -nrm if x[0] >= 0 else nrm
        v[0] -= alpha
        vtv = v @ v
        if vtv == 0.0:
            vs.append(None)
            continue
        R[j:, j:] -= np.outer(v, (2.0 / vtv) * (v @ R[j:, j:]))
        vs.append(v)
    Q = np.zeros((s, p))
    Q[:p, :p] = np.eye(p)
    for j in range(p - 1, -1, -1):
        v = vs[j]
        if v is None:
            continue
        vtv = v @ v
        Q[j:, :] -= np.outer(v, (2.0 / vtv) * (v @ Q[j:, :]))
    return Q, np.triu(R[:p, :])


@njit(nogil=True, cache=True)
def _solve_inplace(M, rows, cols, tol_factor, coef):
    """Factorize M[:rows, :cols+1] (last column is the rhs) and solve.

    Returns (ok, ssr). On rank deficiency ok is False and ssr is 0.
    coef[:cols] receives the solution when ok.
    """
    maxdiag = 0.0
    ok = True
    for j in range(cols):
        nrm2 = 0.0
        for i in range(j, rows):
            nrm2 += M[i, j] * M[i, j]
        nrm = np.sqrt(nrm2)
        if nrm == 0.0:
            ok = False
            continue
        if M[j, j] >= 0:
            alpha = -nrm
        else:
            alpha = nrm
        vj = M[j, j] - alpha
        vtv = nrm2 - M[j, j] * M[j, j] + vj * vj
        M[j, j] = vj
        for c in range(j + 1, cols + 1):
            w = 0.0
            for i in range(j, rows):
                w += M[i, j] * M[i, c]
            fac = 2.0 * w / vtv
            for i in range(j, rows):
                M[i, c] -= fac * M[i, j]
        M[j, j] = alpha
        a = abs(alpha)
        if a > maxdiag:
            maxdiag = a
    if ok:
        for j in range(cols):
            if abs(M[j, j]) < tol_factor * maxdiag:
                ok = False
    if not ok:
        return False, 0.0
    for j in range(cols - 1, -1, -1):
        acc = M[j, cols]
        for c in range(j + 1, cols):
            acc -= M[j, c] * coef[c]
        coef[j] = acc / M[j, j]
    ssr = 0.0
    for i in range(cols, rows):
        ssr += M[i, cols] * M[i, cols]
    return True, ssr


@njit(nogil=True, cache=True)
def score_tuples(values, y, bounds, tuples, tol_factor, out):
    """Pooled mean-squared-error scores for a batch of feature tuples.

    values: (m, s) feature rows with task-contiguous sample columns.
    y: (s,) property in the same sample order and dtype.
    bounds: (ntasks+1,) int64 task boundaries on the sample axis.
    tuples: (T, n) int64 feature indices, each row strictly increasing.
    out: (T,) float64, receives SSR / s pooled over tasks, or +inf when
    any task's system is rank deficient.
    """
    T, n = tuples.shape
    s = values.shape[1]
    ntasks = bounds.shape[0] - 1
    p = n + 1
    maxrows = 0
    for t in range(ntasks):
        r = bounds[t + 1] - bounds[t]
        if r > maxrows:
            maxrows = r
    M = np.empty((maxrows, p + 1), dtype=values.dtype)
    coef = np.empty(p, dtype=values.dtype)
    for t in range(T):
        total_ssr = 0.0
        ok_all = True
        for task in range(ntasks):
            lo = bounds[task]
            rows = bounds[task + 1] - lo
            for k in range(n):
                f = tuples[t, k]
                for i in range(rows):
                    M[i, k] = values[f, lo + i]
            for i in range(rows):
                M[i, n] = 1.0
                M[i, p] = y[lo + i]
            ok, ssr = _solve_inplace(M, rows, p, tol_factor, coef)
            if not ok:
                ok_all = False
                break
            total_ssr += ssr
        if ok_all:
            out[t] = total_ssr / s
        else:
            out[t] = np.inf


@njit(nogil=True, cache=True)
def fit_tuple_kernel(values, y, bounds, tup, tol_factor, coef_out, ssr_out):
    """Coefficients and per-task SSR for one tuple.

    coef_out: (ntasks, n+1), last column is the intercept.
    ssr_out: (ntasks,). Returns False when any task is rank deficient.
    """
    n = tup.shape[0]
    ntasks = bounds.shape[0] - 1
    p = n + 1
    maxrows = 0
    for t in range(ntasks):
        r = bounds[t + 1] - bounds[t]
        if r > maxrows:
            maxrows = r
    M = np.empty((maxrows, p + 1), dtype=values.dtype)
    coef = np.empty(p, dtype=values.dtype)
    for task in range(ntasks):
        lo = bounds[task]
        rows = bounds[task + 1] - lo
        for k in range(n):
            f = tup[k]
            for i in range(rows):
                M[i, k] = values[f, lo + i]
        for i in range(rows):
            M[i, n] = 1.0
            M[i, p] = y[lo + i]
        ok, ssr = _solve_inplace(M, rows, p, tol_factor, coef)
        if not ok:
            return False
        for k in range(p):
            coef_out[task, k] = coef[k]
        ssr_out[task] = ssr
    return True


@njit(nogil=True, cache=True)
def fill_combinations(cur, m, out, count):
    """Write count consecutive lexicographic n-combinations starting at cur.

    cur (n,) int64 is advanced in place to the combination after the last
    one written, so successive calls walk the enumeration. Behaviour past
    the final combination is undefined; callers bound count by the rank
    distance to the end.
    """
    n = cur.shape[0]
    for t in range(count):
        for k in range(n):
            out[t, k] = cur[k]
        j = n - 1
        while j >= 0 and cur[j] == m - n + j:
            j -= 1
        if j < 0:
            break
        cur[j] += 1
        for k in range(j + 1, n):
            cur[k] = cur[k - 1] + 1
