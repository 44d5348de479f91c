"""Small dense linear algebra for the compiled kernels.

State dimensions here are tiny (d <= a handful), so an explicit LU with
partial pivoting plus a 1-norm condition estimate from the explicit inverse
is cheaper than calling into LAPACK from inside a tight loop.
"""

import numpy as np
from numba import njit

COND_LIMIT = 1e14


@njit(cache=True, nogil=True)
def solve_with_cond(a, b):
    """Solve ``a @ y = b``; return ``(y, cond1)``.

    ``cond1`` is the 1-norm condition number, ``inf`` when a pivot vanishes.
    """
    n = a.shape[0]
    lu = a.copy()
    perm = np.arange(n)
    for col in range(n):
        p = col
        best = abs(lu[col, col])
        for r in range(col + 1, n):
            if abs(lu[r, col]) > best:
                best = abs(lu[r, col])
                p = r
        if best == 0.0 or not np.isfinite(best):
            return np.full(n, np.nan), np.inf
        if p != col:
            for c in range(n):
                tmp = lu[col, c]
                lu[col, c] = lu[p, c]
                lu[p, c] = tmp
            tmp_i = perm[col]
            perm[col] = perm[p]
            perm[p] = tmp_i
        for r in range(col + 1, n):
            lu[r, col] /= lu[col, col]
            for c in range(col + 1, n):
                lu[r, c] -= lu[r, col] * lu[col, c]

    y = _lu_apply(lu, perm, b)
    if n == 1:
        return y, 1.0

    anorm = 0.0
    for c in range(n):
        s = 0.0
        for r in range(n):
            s += abs(a[r, c])
        anorm = max(anorm, s)
    inv_norm = 0.0
    e = np.zeros(n)
    for c in range(n):
        e[:] = 0.0
        e[c] = 1.0
        col_vec = _lu_apply(lu, perm, e)
        s = 0.0
        for r in range(n):
            s += abs(col_vec[r])
        inv_norm = max(inv_norm, s)
    return y, anorm * inv_norm


@njit(cache=True, nogil=True)
def _lu_apply(lu, perm, b):
    n = lu.shape[0]
    y = np.empty(n)
    for i in range(n):
        y[i] = b[perm[i]]
    for i in range(n):
        for j in range(i):
            y[i] -= lu[i, j] * y[j]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            y[i] -= lu[i, j] * y[j]
        y[i] /= lu[i, i]
    return y
