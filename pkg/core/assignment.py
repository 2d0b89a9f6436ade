"""Rectangular minimum-cost assignment and Murty's ranked assignments.

Cost matrices are ``n_rows x n_cols`` arrays with ``n_rows <= n_cols``;
``+inf`` marks a forbidden pair. Every row must be assigned to a distinct
column.
"""
import heapq
import logging
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DomainError, InfeasibleAssignmentError
from .models import Assignment

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]


def _as_cost_matrix(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise DomainError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if np.isnan(cost).any() or np.isneginf(cost).any():
        raise DomainError("cost matrix entries must be finite or +inf")
    return cost


def _solve(cost: np.ndarray, fixed: Tuple[Pair, ...] = (),
           forbidden: FrozenSet[Pair] = frozenset()) -> Optional[Assignment]:
    """Optimal assignment under fixed and forbidden pairs, or None if infeasible"""
    n_rows, n_cols = cost.shape
    fixed_rows = {i for i, _ in fixed}
    fixed_cols = {j for _, j in fixed}
    free_rows = [i for i in range(n_rows) if i not in fixed_rows]
    free_cols = [j for j in range(n_cols) if j not in fixed_cols]
    row_to_col = [-1] * n_rows
    for i, j in fixed:
        row_to_col[i] = j
    if free_rows:
        if len(free_rows) > len(free_cols):
            return None
        sub = cost[np.ix_(free_rows, free_cols)]
        if forbidden:
            sub = sub.copy()
            row_pos = {r: a for a, r in enumerate(free_rows)}
            col_pos = {c: b for b, c in enumerate(free_cols)}
            for i, j in forbidden:
                if i in row_pos and j in col_pos:
                    sub[row_pos[i], col_pos[j]] = np.inf
        if not np.isfinite(sub).any(axis=1).all():
            return None
        try:
            rows, cols = linear_sum_assignment(sub)
        except ValueError:
            return None
        picked = sub[rows, cols]
        if not np.isfinite(picked).all():
            return None
        for a, b in zip(rows, cols):
            row_to_col[free_rows[a]] = free_cols[b]
    total = 0.0
    for i, j in enumerate(row_to_col):
        total += cost[i, j]
    return Assignment(row_to_col=tuple(row_to_col), cost=float(total))


def _ties(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


def _lexicographic_refinement(cost: np.ndarray, best: Assignment) -> Assignment:
    """Among the optimal assignments, pick the lexicographically smallest row_to_col"""
    fixed: List[Pair] = []
    for i in range(cost.shape[0]):
        used = {j for _, j in fixed}
        for j in range(best.row_to_col[i]):
            if j in used or not np.isfinite(cost[i, j]):
                continue
            candidate = _solve(cost, tuple(fixed) + ((i, j),))
            if candidate is not None and _ties(candidate.cost, best.cost):
                best = candidate
                break
        fixed.append((i, best.row_to_col[i]))
    return best


def solve_min_cost(cost) -> Assignment:
    """Minimum-cost assignment, ties broken towards the lexicographically smallest"""
    cost = _as_cost_matrix(cost)
    if cost.shape[0] > cost.shape[1]:
        raise InfeasibleAssignmentError(f"{cost.shape[0]} rows cannot be assigned to {cost.shape[1]} columns")
    best = _solve(cost)
    if best is None:
        raise InfeasibleAssignmentError("no finite-cost assignment covers every row")
    return _lexicographic_refinement(cost, best)


def _murty(cost: np.ndarray, m: int) -> List[Assignment]:
    """Murty's partitioning over a single connected block"""
    n_rows = cost.shape[0]
    try:
        root = solve_min_cost(cost)
    except InfeasibleAssignmentError:
        return []

    # entries: (cost, row_to_col, fixed pairs, forbidden pairs)
    heap = [(root.cost, root.row_to_col, (), frozenset())]
    ranked: List[Assignment] = []
    while heap and len(ranked) < m:
        node_cost, row_to_col, fixed, forbidden = heapq.heappop(heap)
        ranked.append(Assignment(row_to_col=row_to_col, cost=node_cost))
        fixed_rows = {i for i, _ in fixed}
        children_fixed = list(fixed)
        for i in range(n_rows):
            if i in fixed_rows:
                continue
            child_forbidden = forbidden | {(i, row_to_col[i])}
            child = _solve(cost, tuple(children_fixed), child_forbidden)
            if child is not None:
                heapq.heappush(heap, (child.cost, child.row_to_col, tuple(children_fixed), child_forbidden))
            children_fixed.append((i, row_to_col[i]))
    return ranked


def _row_blocks(finite: np.ndarray) -> List[List[int]]:
    """Rows grouped into blocks that share no column with a finite entry"""
    parent = list(range(finite.shape[0]))

    def root(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for column in finite.T:
        rows = np.flatnonzero(column)
        for i in rows[1:]:
            a, b = root(rows[0]), root(i)
            if a != b:
                parent[max(a, b)] = min(a, b)
    blocks: Dict[int, List[int]] = {}
    for i in range(finite.shape[0]):
        blocks.setdefault(root(i), []).append(i)
    return [blocks[key] for key in sorted(blocks)]


def _combine(cost: np.ndarray, parts: List[Tuple[List[int], List[List[int]], List[float]]],
             m: int) -> List[Assignment]:
    """The m cheapest combinations of independently ranked blocks"""
    def total(index: Tuple[int, ...]) -> float:
        return float(sum(costs[index[b]] for b, (_, _, costs) in enumerate(parts)))

    start = (0,) * len(parts)
    heap = [(total(start), start)]
    seen = {start}
    picked = []
    while heap and len(picked) < m:
        _, index = heapq.heappop(heap)
        picked.append(index)
        for b, (_, columns, _) in enumerate(parts):
            if index[b] + 1 < len(columns):
                successor = index[:b] + (index[b] + 1,) + index[b + 1:]
                if successor not in seen:
                    seen.add(successor)
                    heapq.heappush(heap, (total(successor), successor))

    ranked = []
    for index in picked:
        row_to_col = [-1] * cost.shape[0]
        for b, (rows, columns, _) in enumerate(parts):
            for i, j in zip(rows, columns[index[b]]):
                row_to_col[i] = j
        value = 0.0
        for i, j in enumerate(row_to_col):
            value += cost[i, j]
        ranked.append(Assignment(row_to_col=tuple(row_to_col), cost=float(value)))
    ranked.sort(key=lambda a: (a.cost, a.row_to_col))
    return ranked


def murty_kbest(cost, m: int) -> List[Assignment]:
    """The ``m`` cheapest assignments in nondecreasing cost order.

    Rows that share no finite column are ranked independently and the ranked
    blocks are merged. An infeasible problem yields an empty list.
    """
    if m < 1:
        raise DomainError(f"m must be >= 1, got {m}")
    cost = _as_cost_matrix(cost)
    n_rows = cost.shape[0]
    if n_rows > cost.shape[1]:
        return []
    finite = np.isfinite(cost)
    if n_rows and not finite.any(axis=1).all():
        return []
    blocks = _row_blocks(finite)
    if len(blocks) <= 1:
        ranked = _murty(cost, m)
    else:
        parts = []
        for rows in blocks:
            columns = np.flatnonzero(finite[rows].any(axis=0))
            block_ranked = _murty(cost[np.ix_(rows, columns)], m)
            if not block_ranked:
                return []
            parts.append((rows, [[int(columns[c]) for c in a.row_to_col] for a in block_ranked],
                          [a.cost for a in block_ranked]))
        ranked = _combine(cost, parts, m)
    logger.debug("murty: %d of %d requested assignments over %d blocks", len(ranked), m, len(blocks))
    return ranked
