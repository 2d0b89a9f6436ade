"""Set-of-trajectories operations and exact multitarget density evaluation."""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError
from .gaussian import gaussian_logpdf, mixture_logpdf
from .models import GaussianDensity, GaussianMixture, MotionModel, MultiBernoulli, Trajectory, TrajectorySet


def states_at(trajectories: TrajectorySet, k: int) -> List[np.ndarray]:
    """States present at time k, in the set's canonical order"""
    if k < 1:
        raise DomainError(f"time step must be >= 1, got {k}")
    return [t.state_at(k) for t in trajectories if t.present_at(k)]


def restrict(trajectories: TrajectorySet, alpha: int, gamma: int) -> TrajectorySet:
    """Restriction of every trajectory to the interval [alpha, gamma]"""
    parts = (t.restrict(alpha, gamma) for t in trajectories)
    return TrajectorySet.of(p for p in parts if p is not None)


def split_interval(trajectories: TrajectorySet, k: int) -> Tuple[TrajectorySet, TrajectorySet, TrajectorySet]:
    """Partition a set on [k, k+1] into survivors, deaths at k and births at k+1"""
    survivors, deaths, births = [], [], []
    for t in trajectories:
        if t.birth_time < k or t.end_time > k + 1:
            raise DomainError(f"trajectory on [{t.birth_time}, {t.end_time}] lies outside [{k}, {k + 1}]")
        if t.birth_time == k + 1:
            births.append(t)
        elif t.length == 2:
            survivors.append(t)
        else:
            deaths.append(t)
    return TrajectorySet.of(survivors), TrajectorySet.of(deaths), TrajectorySet.of(births)


def _canonical(states: Sequence[np.ndarray]) -> List[np.ndarray]:
    return sorted((np.asarray(x, dtype=float).reshape(-1) for x in states), key=lambda x: tuple(x))


def component_logpdf(density: GaussianDensity, x: np.ndarray) -> float:
    """Log density of one Bernoulli component; a zero covariance is an atom at the mean"""
    if not np.any(density.covariance):
        return 0.0 if np.array_equal(x, density.mean) else -np.inf
    return gaussian_logpdf(density, x)


def eval_mb_log_density(mb: MultiBernoulli, states: Sequence[np.ndarray]) -> float:
    """Log multi-Bernoulli set density at a finite set of states.

    Sums over every injective assignment of states to components, with
    unassigned components contributing their nonexistence probability.
    Point-mass components are evaluated against counting measure at their
    atom, matching the exact draws of ``sample_gaussian``.
    """
    states = _canonical(states)
    n, components = len(states), len(mb)
    if mb.dim is not None:
        for x in states:
            if x.size != mb.dim:
                raise DomainError(f"state dimension {x.size} does not match density dimension {mb.dim}")
    if n > components:
        return -np.inf
    full = (1 << n) - 1
    # table[mask]: log sum over the components seen so far, with ``mask`` the states used
    table = np.full(1 << n, -np.inf)
    table[0] = 0.0
    with np.errstate(divide="ignore"):
        for bernoulli in mb:
            log_r = np.log(bernoulli.existence)
            log_absent = np.log1p(-bernoulli.existence)
            log_p = [component_logpdf(bernoulli.density, x) if bernoulli.existence > 0.0 else -np.inf
                     for x in states]
            nxt = table + log_absent
            for mask in range(full + 1):
                if table[mask] == -np.inf:
                    continue
                for i in range(n):
                    if not mask & (1 << i):
                        nxt[mask | (1 << i)] = np.logaddexp(nxt[mask | (1 << i)], table[mask] + log_r + log_p[i])
            table = nxt
    return float(table[full])


def eval_predicted_trajectory_log_density(f_k: MultiBernoulli, trajectories: TrajectorySet, model: MotionModel,
                                          k: int, birth_intensity: Optional[GaussianMixture] = None) -> float:
    """Log one-step predicted density of a set of trajectories on [k, k+1].

    Product of the filtering density at the states alive at k, the Poisson
    birth term, a death factor per trajectory ending at k and a transition
    factor per survivor.
    """
    birth = model.birth_intensity if birth_intensity is None else birth_intensity
    survivors, deaths, births = split_interval(trajectories, k)
    current = [t.states[0] for t in survivors] + [t.states[0] for t in deaths]
    log_density = eval_mb_log_density(f_k, current) - birth.total_weight
    if log_density == -np.inf:
        return -np.inf
    p_s = model.survival_probability
    with np.errstate(divide="ignore"):
        if deaths:
            log_density += len(deaths) * np.log1p(-p_s)
        if survivors:
            log_density += len(survivors) * np.log(p_s)
    for t in births:
        log_density += mixture_logpdf(birth, t.states[0])
    F, Q = model.transition_matrix, model.process_noise
    for t in survivors:
        log_density += gaussian_logpdf(GaussianDensity(F @ t.states[0], Q), t.states[1])
    return float(log_density)
