"""GOSPA (alpha = 2) with its decomposition, and a per-step track-switch count."""
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .assignment import solve_min_cost
from .errors import DomainError
from .models import GospaResult, TrajectorySet

ALPHA = 2.0


def positions(states: Sequence[np.ndarray], dims: Optional[int] = None) -> np.ndarray:
    """Stack states into an (n, dims) array of their leading coordinates"""
    if len(states) == 0:
        return np.zeros((0, dims or 0))
    stacked = np.array([np.asarray(x, dtype=float).reshape(-1) for x in states])
    return stacked if dims is None else stacked[:, :dims]


def _check(c: float, p: float):
    if c <= 0:
        raise DomainError(f"cutoff c must be > 0, got {c}")
    if p < 1:
        raise DomainError(f"order p must be >= 1, got {p}")


def _optimal_pairs(estimate: np.ndarray, truth: np.ndarray, c: float, p: float) -> Tuple[Dict[int, int], float]:
    """GOSPA-optimal truth -> estimate pairs closer than c, with their summed d^p"""
    if len(estimate) == 0 or len(truth) == 0:
        return {}, 0.0
    distances = np.linalg.norm(truth[:, None, :] - estimate[None, :, :], axis=2)
    cost = np.minimum(distances, c) ** p
    transposed = len(truth) > len(estimate)
    assignment = solve_min_cost(cost.T if transposed else cost)
    pairs, localization = {}, 0.0
    for row, col in enumerate(assignment.row_to_col):
        t, e = (col, row) if transposed else (row, col)
        if distances[t, e] < c:
            pairs[t] = e
            localization += cost[t, e]
    return dict(sorted(pairs.items())), localization


def gospa(estimate, truth, c: float = 40.0, p: float = 1.0) -> GospaResult:
    """GOSPA between two finite sets of positions.

    Components are reported before the 1/p root, so for p = 1
    ``total == localization + missed + false_``.
    """
    _check(c, p)
    estimate = np.asarray(estimate, dtype=float).reshape(len(estimate), -1) if len(estimate) else np.zeros((0, 1))
    truth = np.asarray(truth, dtype=float).reshape(len(truth), -1) if len(truth) else np.zeros((0, 1))
    pairs, localization = _optimal_pairs(estimate, truth, c, p)
    miss_cost = c ** p / ALPHA
    missed = miss_cost * (len(truth) - len(pairs))
    false = miss_cost * (len(estimate) - len(pairs))
    total = localization + missed + false
    if p != 1:
        total = total ** (1.0 / p)
    return GospaResult(total=float(total), localization=float(localization), missed=float(missed),
                       false_=float(false))


def _alive(trajectories: TrajectorySet, k: int, dims: Optional[int]) -> Tuple[list, np.ndarray]:
    ids, states = [], []
    for index, trajectory in enumerate(trajectories):
        if trajectory.present_at(k):
            ids.append(index)
            states.append(trajectory.state_at(k))
    return ids, positions(states, dims)


def track_switches_per_step(estimate: TrajectorySet, truth: TrajectorySet, c: float = 40.0, p: float = 1.0,
                            position_dims: Optional[int] = None, horizon: Optional[int] = None) -> np.ndarray:
    """Switch counts for k = 1..horizon.

    A switch is counted at k for every truth track that is paired at k-1 and
    at k, with different estimated trajectories.
    """
    _check(c, p)
    if horizon is None:
        horizon = max([t.end_time for t in truth] + [t.end_time for t in estimate] + [0])
    counts = np.zeros(horizon, dtype=int)
    previous: Dict[int, int] = {}
    for k in range(1, horizon + 1):
        truth_ids, truth_pos = _alive(truth, k, position_dims)
        estimate_ids, estimate_pos = _alive(estimate, k, position_dims)
        pairs, _ = _optimal_pairs(estimate_pos, truth_pos, c, p)
        current = {truth_ids[t]: estimate_ids[e] for t, e in pairs.items()}
        counts[k - 1] = sum(1 for t, e in current.items() if t in previous and previous[t] != e)
        previous = current
    return counts


def track_switches(estimate: TrajectorySet, truth: TrajectorySet, c: float = 40.0,
                   position_dims: Optional[int] = None) -> int:
    return int(track_switches_per_step(estimate, truth, c, position_dims=position_dims).sum())
