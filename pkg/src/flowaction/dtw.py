"""Dynamic time warping cost between byte series.

Local cost is the absolute byte difference and the returned value is the
raw (unnormalised) cost of an optimal warping path.  An empty series is
aligned against an implicit zero, so DTW(x, []) = sum(|x|) and
DTW([], []) = 0.
"""

from __future__ import annotations

from typing import Sequence

import numba
import numpy as np

ORACLE_MAX_CELLS = 36


@numba.njit(cache=True)
def _dtw_kernel(x, y):
    n = x.shape[0]
    m = y.shape[0]
    if n == 0 and m == 0:
        return 0.0
    if n == 0 or m == 0:
        s = 0.0
        z = x if m == 0 else y
        for v in z:
            s += abs(v)
        return s
    # single rolling row of the accumulated cost matrix
    prev = np.empty(m, dtype=np.float64)
    cur = np.empty(m, dtype=np.float64)
    acc = 0.0
    for j in range(m):
        acc += abs(x[0] - y[j])
        prev[j] = acc
    for i in range(1, n):
        xi = x[i]
        cur[0] = prev[0] + abs(xi - y[0])
        for j in range(1, m):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = best + abs(xi - y[j])
        prev, cur = cur, prev
    return prev[m - 1]


def _as_array(s: Sequence[int]) -> np.ndarray:
    return np.asarray(s, dtype=np.float64).reshape(-1)


def dtw_cost(x: Sequence[int], y: Sequence[int]) -> float:
    """Total cost of the optimal warping path between ``x`` and ``y``."""
    return float(_dtw_kernel(_as_array(x), _as_array(y)))


def cost_matrix(x: Sequence[int], y: Sequence[int]) -> np.ndarray:
    """Local cost matrix ``C[i, j] = |x_i - y_j|``."""
    return np.abs(_as_array(x)[:, None] - _as_array(y)[None, :])


def enumerate_paths_oracle(x: Sequence[int], y: Sequence[int]) -> float:
    """Minimum path cost by exhaustive enumeration of warping paths.

    Independent of the dynamic programme above: every index sequence that
    starts at (1, 1), ends at (N, M) and advances by (0,1), (1,0) or (1,1)
    is walked explicitly.  Only for small inputs (N*M <= 36).
    """
    n, m = len(x), len(y)
    if n * m > ORACLE_MAX_CELLS:
        raise ValueError(f"oracle limited to {ORACLE_MAX_CELLS} cells, got {n}x{m}")
    if n == 0 or m == 0:
        return float(sum(abs(v) for v in list(x) + list(y)))

    best = float("inf")
    stack = [(0, 0, abs(x[0] - y[0]))]
    while stack:
        i, j, cost = stack.pop()
        if (i, j) == (n - 1, m - 1):
            best = min(best, cost)
            continue
        for di, dj in ((0, 1), (1, 0), (1, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                stack.append((a, b, cost + abs(x[a] - y[b])))
    return float(best)
