"""Minimum-cost bipartite assignment with gating.

The solver pads the (possibly rectangular) cost matrix to a square one
whose gated and dummy cells carry a large constant, runs a
shortest-augmenting-path Hungarian pass, then re-derives the answer from
the optimal duals: among all minimum-cost matchings it returns the
lexicographically smallest one (by row index, then column index), which
makes every caller fully deterministic. Gated pairs never appear in the
result.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np


def _solve_square(cost: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest-augmenting-path assignment on a square matrix.

    Returns (col_of_row, row_duals, col_duals); the duals certify
    optimality and drive the tie-break pass.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j] = row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            j1 = 0
            delta = np.inf
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _kuhn_can_complete(adj: List[List[int]], n_cols: int) -> bool:
    """True if every adjacency row can be matched to a distinct column."""
    match_col = [-1] * n_cols

    def try_row(r: int, seen: List[bool]) -> bool:
        for c in adj[r]:
            if seen[c]:
                continue
            seen[c] = True
            if match_col[c] == -1 or try_row(match_col[c], seen):
                match_col[c] = r
                return True
        return False

    for r in range(len(adj)):
        if not try_row(r, [False] * n_cols):
            return False
    return True


def _lexicographic_matching(zero: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching in a feasibility mask.

    Greedy per row: pin the smallest column that still leaves the
    remaining rows perfectly matchable inside the mask.
    """
    n = zero.shape[0]
    chosen = np.full(n, -1, dtype=int)
    col_taken = np.zeros(n, dtype=bool)
    for r in range(n):
        for c in range(n):
            if col_taken[c] or not zero[r, c]:
                continue
            adj = [
                [j for j in range(n) if zero[rr, j] and not col_taken[j] and j != c]
                for rr in range(r + 1, n)
            ]
            if _kuhn_can_complete(adj, n):
                chosen[r] = c
                col_taken[c] = True
                break
        if chosen[r] == -1:
            raise RuntimeError("zero-subgraph lost feasibility; duals inconsistent")
    return chosen


def hungarian(
    cost: np.ndarray,
    gate: float = np.inf,
    allowed: Optional[np.ndarray] = None,
) -> List[Tuple[int, int]]:
    """Minimum-total-cost matching over pairs with cost strictly below gate.

    Rectangular matrices are fine; rows/columns that stay unmatched are
    simply absent from the result. ``allowed`` overrides the gate with an
    explicit boolean mask (used by callers whose threshold is inclusive).
    Among equal-cost optima the (row, column) lexicographically smallest
    matching wins. Pairs come back sorted by row index.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    if allowed is None:
        allowed = cost < gate
    else:
        allowed = np.asarray(allowed, dtype=bool)
        if allowed.shape != cost.shape:
            raise ValueError(f"allowed mask shape {allowed.shape} != cost shape {cost.shape}")
    if not allowed.any():
        return []

    # Dummy cost dominating any real total, scaled to the problem so the
    # dual arithmetic keeps enough precision for the zero test below.
    scale = max(1.0, float(np.abs(cost[allowed]).max()))
    big = scale * 1e6
    s = max(n, m)
    padded = np.full((s, s), big)
    padded[:n, :m] = np.where(allowed, cost, big)

    col_of_row, u, v = _solve_square(padded)
    # Any optimal matching lives on reduced-cost-zero edges. The tolerance
    # covers dual roundoff accumulated through big-valued augmenting steps.
    reduced = padded - u[:, None] - v[None, :]
    tol = max(1e-9 * scale, big * np.finfo(np.float64).eps * 64 * s)
    zero = reduced <= tol
    zero[np.arange(s), col_of_row] = True  # solver's own edges are optimal by construction
    chosen = _lexicographic_matching(zero)

    return [
        (r, int(chosen[r]))
        for r in range(n)
        if chosen[r] < m and allowed[r, chosen[r]]
    ]
