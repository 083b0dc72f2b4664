"""Gated minimum-cost one-to-one assignment.

The contract for both solvers: among all one-to-one assignments that use only
non-forbidden entries, return one with the largest number of pairs; among
those, the smallest total cost; among those, the lexicographically smallest
pair list ordered by ``(row, col)``.

Costs are compared exactly: every finite double is a dyadic rational, so a
matrix is rescaled to integers by the common power-of-two denominator of its
entries and all optimization runs in integer arithmetic. The reported total
cost is the correctly rounded sum (``math.fsum``) of the selected entries.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

FORBIDDEN = math.inf

BRUTEFORCE_LIMIT = 9


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]
    unmatched_rows: tuple[int, ...]
    unmatched_cols: tuple[int, ...]
    total_cost: float = 0.0

    def __len__(self) -> int:
        return len(self.pairs)


def as_cost_matrix(costs) -> np.ndarray:
    """Validate and copy ``costs`` into a float (rows, cols) array.

    Entries must be finite and >= 0, or ``FORBIDDEN`` (+inf).
    """
    arr = np.array(costs, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {arr.shape}")
    if np.any(np.isnan(arr)):
        raise ValueError("cost matrix contains NaN")
    if np.any(arr < 0):
        raise ValueError("cost matrix entries must be >= 0")
    if np.any(arr == -math.inf):
        raise ValueError("cost matrix contains -inf")
    return arr


def _exact_ints(arr: np.ndarray) -> list[list[int | None]]:
    """Finite entries scaled to integers with one common factor; ``None`` marks FORBIDDEN."""
    ratios = [[float(x).as_integer_ratio() if math.isfinite(x) else None for x in row] for row in arr]
    denom = max((r[1] for row in ratios for r in row if r is not None), default=1)
    return [[None if r is None else r[0] * (denom // r[1]) for r in row] for row in ratios]


def _result(cost: np.ndarray, pairs: list[tuple[int, int]]) -> Assignment:
    pairs = sorted(pairs)
    rows, cols = cost.shape
    used_r = {r for r, _ in pairs}
    used_c = {c for _, c in pairs}
    return Assignment(
        pairs=tuple(pairs),
        unmatched_rows=tuple(r for r in range(rows) if r not in used_r),
        unmatched_cols=tuple(c for c in range(cols) if c not in used_c),
        total_cost=math.fsum(float(cost[r, c]) for r, c in pairs),
    )


def _components(feasible: np.ndarray) -> list[tuple[list[int], list[int]]]:
    """Connected components of the bipartite feasibility graph (edge-bearing only)."""
    rows, cols = feasible.shape
    parent = list(range(rows + cols))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for r, c in zip(*np.nonzero(feasible)):
        a, b = find(int(r)), find(rows + int(c))
        if a != b:
            parent[max(a, b)] = min(a, b)
    groups: dict[int, tuple[list[int], list[int]]] = {}
    for r in range(rows):
        if feasible[r].any():
            groups.setdefault(find(r), ([], []))[0].append(r)
    for c in range(cols):
        if feasible[:, c].any():
            groups.setdefault(find(rows + c), ([], []))[1].append(c)
    return [groups[k] for k in sorted(groups)]


def _hungarian(a: list[list[int]]) -> tuple[list[int], list[int], list[int]]:
    """Shortest-augmenting-path Hungarian method on a square matrix.

    Returns the row -> col assignment and dual potentials ``u``, ``v`` with
    ``a[i][j] - u[i] - v[j] >= 0`` everywhere and ``== 0`` on the assignment.
    """
    n = len(a)
    inf = math.inf
    u = [0] * (n + 1)
    v = [0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row (1-based) assigned to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = [0] * n
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign, u[1:], v[1:]


def _lex_refine(a: list[list[int]], assign: list[int], u: list[int], v: list[int],
                real: list[list[bool]]) -> list[int]:
    """Move to the lexicographically smallest optimum among the tight (zero reduced cost) edges.

    ``real[i][j]`` marks entries that count as pairs (rows and columns of the
    unpadded matrix, non-forbidden). Rows are fixed in order; row ``i`` takes
    the smallest real column reachable by an alternating cycle through the
    rows not yet fixed, or through fixed rows that hold no real pair.
    """
    n = len(a)
    tight = [[j for j in range(n) if a[i][j] - u[i] - v[j] == 0] for i in range(n)]
    owner = [0] * n
    for i, j in enumerate(assign):
        owner[j] = i

    def movable(row: int, col: int, fixed_upto: int) -> bool:
        # A fixed row keeps its pair list: it may only trade one non-real column for another.
        return row > fixed_upto or not real[row][col]

    def reroute(start_row: int, taken_col: int, target_col: int, fixed_upto: int) -> list[tuple[int, int]] | None:
        # DFS over rows > fixed_upto; returns (row, new_col) moves ending on target_col.
        seen_cols = {taken_col}
        stack = [(start_row, iter(tight[start_row]))]
        path: list[tuple[int, int]] = []
        while stack:
            row, it = stack[-1]
            advanced = False
            for col in it:
                if col == assign[row] or col in seen_cols or not movable(row, col, fixed_upto):
                    continue
                seen_cols.add(col)
                if col == target_col:
                    return path + [(row, col)]
                nxt = owner[col]
                if nxt <= fixed_upto and real[nxt][assign[nxt]]:
                    continue
                path.append((row, col))
                stack.append((nxt, iter(tight[nxt])))
                advanced = True
                break
            if not advanced:
                stack.pop()
                if path:
                    path.pop()
        return None

    for i in range(n):
        cur = assign[i]
        cur_real = real[i][cur]
        for j in tight[i]:
            if not real[i][j] or (cur_real and j >= cur):
                continue
            r2 = owner[j]
            if r2 < i and real[r2][assign[r2]]:
                continue
            moves = reroute(r2, j, cur, i)
            if moves is None:
                continue
            assign[i] = j
            owner[j] = i
            for row, col in moves:
                assign[row] = col
                owner[col] = row
            break
    return assign


def _solve_component(cost: np.ndarray, rows: list[int], cols: list[int]) -> list[tuple[int, int]]:
    sub = cost[np.ix_(rows, cols)]
    r, c = sub.shape
    if r == 1 and c == 1:
        return [(rows[0], cols[0])]
    exact = _exact_ints(sub)
    max_finite = max((x for row in exact for x in row if x is not None), default=0)
    # Any assignment with one more real pair beats any with fewer.
    big = max_finite * min(r, c) + 2
    n = max(r, c)
    a = [[big] * n for _ in range(n)]
    real = [[False] * n for _ in range(n)]
    for i in range(r):
        for j in range(c):
            if exact[i][j] is not None:
                a[i][j] = exact[i][j]
                real[i][j] = True
    assign, u, v = _hungarian(a)
    assign = _lex_refine(a, assign, u, v, real)
    return [(rows[i], cols[j]) for i, j in enumerate(assign) if real[i][j]]


def solve(costs) -> Assignment:
    """Gated assignment: maximum cardinality, then minimum cost, then lexicographic.

    ``FORBIDDEN`` entries are never selected. Rows and columns may be empty.

    >>> solve([[1, FORBIDDEN], [3, 1]]).pairs
    ((0, 0), (1, 1))
    """
    cost = as_cost_matrix(costs)
    feasible = np.isfinite(cost)
    pairs: list[tuple[int, int]] = []
    for rows, cols in _components(feasible):
        pairs.extend(_solve_component(cost, rows, cols))
    return _result(cost, pairs)


@lru_cache(maxsize=None)
def _injections(m: int, n: int) -> np.ndarray:
    """Every injective map of m items into n slots, one row per map."""
    return np.array(list(itertools.permutations(range(n), m)), dtype=np.intp).reshape(-1, m)


def solve_bruteforce(costs) -> Assignment:
    """Exhaustive reference solver with the same contract as :func:`solve`.

    Enumerates every injective map from the smaller side into the larger
    side; each map contributes its non-forbidden entries as a matching.
    Every maximum-cardinality matching is exactly the non-forbidden part of
    some injection (extra feasible pairs would contradict maximality), so the
    optimum is among the candidates. Candidates within rounding distance of
    the best penalized sum are re-ranked exactly.
    """
    cost = as_cost_matrix(costs)
    rows, cols = cost.shape
    if max(rows, cols) > BRUTEFORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTEFORCE_LIMIT}x{BRUTEFORCE_LIMIT}, got {rows}x{cols}")
    if rows == 0 or cols == 0 or not np.isfinite(cost).any():
        return _result(cost, [])
    transposed = rows > cols
    work = cost.T if transposed else cost
    m, n = work.shape
    penalty = float(work[np.isfinite(work)].max()) * m + 2.0
    penalized = np.where(np.isfinite(work), work, penalty)
    maps = _injections(m, n)
    sums = penalized[0, maps[:, 0]]
    for i in range(1, m):
        sums = sums + penalized[i, maps[:, i]]
    lo = sums.min()
    exact = _exact_ints(work)
    best_key = None
    best_pairs: list[tuple[int, int]] = []
    for idx in np.nonzero(sums <= lo + 1e-9 * penalty)[0]:
        pairs = [(i, int(j)) for i, j in enumerate(maps[idx]) if exact[i][j] is not None]
        total = sum(exact[i][j] for i, j in pairs)
        if transposed:
            pairs = sorted((j, i) for i, j in pairs)
        key = (-len(pairs), total, pairs)
        if best_key is None or key < best_key:
            best_key, best_pairs = key, pairs
    return _result(cost, best_pairs)
