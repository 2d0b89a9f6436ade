"""Backward-simulation smoother for sets of trajectories.

Each particle starts from a sample of the last multi-Bernoulli filtering
density and is extended one step at a time into the past. At every step the
backward kernel is a mixture over global hypotheses that link filter
components at k to the trajectories alive at k+1; the mixture is truncated
to its M best components with Murty's algorithm and one hypothesis is
sampled.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.special import logsumexp

from .assignment import murty_kbest
from .errors import DomainError, SmoothingFailure
from .gaussian import (backward_condition, gate_threshold, gaussian_logpdf, mahalanobis_sq, mixture_logpdf,
                       predict_moments, sample_gaussian)
from .models import (FilterState, GaussianMixture, GlobalHypothesis, HypothesisKind, MotionModel, MultiBernoulli,
                     Particle, SingleTrajectoryHypothesis, Trajectory, TrajectorySet)

logger = logging.getLogger(__name__)

LOG_BIRTH_FLOOR = np.log(1e-300)
MAX_RETRIES = 10


@dataclass(frozen=True)
class SmootherSettings:
    particles: int = 300
    murty_m: int = 30
    gate_probability: Optional[float] = 0.999
    max_retries: int = MAX_RETRIES

    def __post_init__(self):
        if self.particles < 1:
            raise DomainError(f"particles must be >= 1, got {self.particles}")
        if self.murty_m < 1:
            raise DomainError(f"murty_m must be >= 1, got {self.murty_m}")
        if self.gate_probability is not None and not 0.0 < self.gate_probability < 1.0:
            raise DomainError(f"gate_probability must lie in (0, 1), got {self.gate_probability}")
        if self.max_retries < 0:
            raise DomainError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass(frozen=True, eq=False)
class BackwardCostMatrix:
    """Costs [link | die | absent] for the components at k versus the survivors at k+1"""
    entries: np.ndarray
    log_birth_weights: np.ndarray
    floored: Tuple[bool, ...]
    n_components: int
    n_survivors: int


def build_cost_matrix(mb_k: MultiBernoulli, survivors: Sequence[Trajectory], model: MotionModel,
                      gate: float = np.inf, birth_intensity: Optional[GaussianMixture] = None) -> BackwardCostMatrix:
    """Negated log weights of the backward-kernel association problem.

    ``survivors`` are the trajectories alive at k+1; their first state is the
    state at k+1. ``gate`` is a squared Mahalanobis threshold.
    """
    birth = model.birth_intensity if birth_intensity is None else birth_intensity
    n, n_s = len(mb_k), len(survivors)
    first_states = [t.states[0] for t in survivors]

    log_birth = np.empty(n_s)
    floored = []
    for j, x in enumerate(first_states):
        value = mixture_logpdf(birth, x)
        floored.append(bool(value < LOG_BIRTH_FLOOR))
        log_birth[j] = max(value, LOG_BIRTH_FLOOR)
    if any(floored):
        logger.debug("birth intensity floored for %d of %d survivors", sum(floored), n_s)

    entries = np.full((n, n_s + 2 * n), np.inf)
    p_s = model.survival_probability
    for i, bernoulli in enumerate(mb_k):
        r = bernoulli.existence
        if r > 0.0 and p_s > 0.0 and n_s:
            predicted = predict_moments(bernoulli.density, model)
            for j, x in enumerate(first_states):
                if np.isfinite(gate) and mahalanobis_sq(bernoulli.density, model, x) > gate:
                    continue
                entries[i, j] = -(np.log(r) + np.log(p_s) + gaussian_logpdf(predicted, x) - log_birth[j])
        if r > 0.0 and p_s < 1.0:
            entries[i, n_s + i] = -(np.log(r) + np.log1p(-p_s))
        if r < 1.0:
            entries[i, n_s + n + i] = -np.log1p(-r)
    return BackwardCostMatrix(entries=entries, log_birth_weights=log_birth, floored=tuple(floored),
                              n_components=n, n_survivors=n_s)


def enumerate_global_hypotheses(cost: BackwardCostMatrix, mb_k: MultiBernoulli, m: int) -> List[GlobalHypothesis]:
    """The M best global hypotheses with their normalized log probabilities"""
    n, n_s = cost.n_components, cost.n_survivors
    entries = cost.entries
    drafts = []
    for assignment in murty_kbest(entries, m):
        members = []
        absent = 0.0
        linked = set()
        for i, column in enumerate(assignment.row_to_col):
            if column < n_s:
                linked.add(column)
                members.append(SingleTrajectoryHypothesis(
                    HypothesisKind.SURVIVE, -entries[i, column] + cost.log_birth_weights[column],
                    component=i, survivor=column))
            elif column < n_s + n:
                members.append(SingleTrajectoryHypothesis(HypothesisKind.DIE, -entries[i, column], component=i))
            else:
                absent -= entries[i, column]
        members += [SingleTrajectoryHypothesis(HypothesisKind.NEWBORN, cost.log_birth_weights[j], survivor=j)
                    for j in range(n_s) if j not in linked]
        log_weight = float(sum(h.log_weight for h in members) + absent)
        drafts.append((tuple(members), log_weight))
    if not drafts:
        return []
    normalizer = logsumexp([w for _, w in drafts])
    return [GlobalHypothesis(members, w, w - normalizer) for members, w in drafts]


def sample_global_hypothesis(hypotheses: Sequence[GlobalHypothesis], rng: np.random.Generator) -> GlobalHypothesis:
    if len(hypotheses) == 1:
        return hypotheses[0]
    log_p = np.array([h.log_probability for h in hypotheses])
    weights = np.exp(log_p - log_p.max())
    return hypotheses[rng.choice(len(hypotheses), p=weights / weights.sum())]


def truncate_and_sample_hypothesis(cost: BackwardCostMatrix, mb_k: MultiBernoulli, m: int,
                                   rng: np.random.Generator, time_step: int = None) -> GlobalHypothesis:
    hypotheses = enumerate_global_hypotheses(cost, mb_k, m)
    if not hypotheses:
        raise SmoothingFailure(f"no feasible backward hypothesis at k={time_step}", time_step)
    return sample_global_hypothesis(hypotheses, rng)


def sample_hypothesis_trajectory(h: SingleTrajectoryHypothesis, mb_k: MultiBernoulli,
                                 survivors: Sequence[Trajectory], model: MotionModel, k: int,
                                 rng: np.random.Generator) -> Tuple[Trajectory, Optional[int]]:
    """Trajectory on [k, k+1] drawn from a single hypothesis, plus the survivor it links to"""
    if h.kind is HypothesisKind.NEWBORN:
        return Trajectory(k + 1, survivors[h.survivor].states[:1]), h.survivor
    density = mb_k[h.component].density
    if h.kind is HypothesisKind.DIE:
        return Trajectory(k, [sample_gaussian(density.mean, density.covariance, rng)]), None
    x_next = survivors[h.survivor].states[0]
    conditional = backward_condition(density, model, x_next)
    x = sample_gaussian(conditional.mean, conditional.covariance, rng)
    return Trajectory(k, np.vstack([x, x_next])), h.survivor


def extend_backward(particle: Particle, filter_k: FilterState, model: MotionModel, m: int, gate: float,
                    rng: np.random.Generator, birth_intensity: Optional[GaussianMixture] = None) -> Particle:
    """Extend a particle on [k+1, K] to [k, K] with one draw of the backward kernel"""
    k = filter_k.time
    if particle.start_time != k + 1:
        raise DomainError(f"particle starts at {particle.start_time}, expected {k + 1}")
    survivors = [t for t in particle.trajectories if t.birth_time == k + 1]
    born_after = [t for t in particle.trajectories if t.birth_time > k + 1]

    cost = build_cost_matrix(filter_k.posterior, survivors, model, gate, birth_intensity)
    hypothesis = truncate_and_sample_hypothesis(cost, filter_k.posterior, m, rng, time_step=k)

    extended = []
    for member in hypothesis.hypotheses:
        window, linked = sample_hypothesis_trajectory(member, filter_k.posterior, survivors, model, k, rng)
        if linked is None:
            extended.append(window)
        elif member.kind is HypothesisKind.NEWBORN:
            extended.append(survivors[linked])
        else:
            extended.append(survivors[linked].prepend(window.states[0]))
    return Particle(trajectories=TrajectorySet.of(extended + born_after), start_time=k,
                    accumulated_log_weight=particle.accumulated_log_weight + hypothesis.log_probability)


def sample_multi_bernoulli(mb: MultiBernoulli, rng: np.random.Generator) -> List[np.ndarray]:
    """Exact draw of a multi-Bernoulli set: existence first, then the state"""
    states = []
    for bernoulli in mb:
        if rng.random() < bernoulli.existence:
            states.append(sample_gaussian(bernoulli.density.mean, bernoulli.density.covariance, rng))
    return states


def _particle_rng(seed: int, stream: Tuple[int, ...]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=stream))


def _validate_filters(filters: Sequence[FilterState]):
    if not filters:
        raise DomainError("backward simulation needs at least one filtering density")
    for expected, state in enumerate(filters, start=1):
        if state.time != expected:
            raise DomainError(f"filtering densities must cover k = 1..K in order; found k={state.time} at {expected}")


class BackwardSimulator:
    """Draws particles of the smoothing density from a filtering sequence"""

    def __init__(self, filters: Sequence[FilterState], model: MotionModel, settings: SmootherSettings = None,
                 birth_intensities: Optional[Sequence[GaussianMixture]] = None):
        _validate_filters(filters)
        self.filters = list(filters)
        self.model = model
        self.settings = settings or SmootherSettings()
        horizon = len(self.filters)
        if birth_intensities is not None and len(birth_intensities) != horizon - 1:
            raise DomainError(f"need {horizon - 1} per-step birth intensities, got {len(birth_intensities)}")
        self.birth_intensities = birth_intensities
        p = self.settings.gate_probability
        self.threshold = np.inf if p is None else gate_threshold(p, model.dim)

    def _backward_pass(self, rng: np.random.Generator, ungated: Set[int]) -> Particle:
        last = self.filters[-1]
        terminal = sample_multi_bernoulli(last.posterior, rng)
        particle = Particle(TrajectorySet.of(Trajectory(last.time, [x]) for x in terminal), start_time=last.time)
        for filter_k in reversed(self.filters[:-1]):
            k = filter_k.time
            gate = np.inf if k in ungated else self.threshold
            birth = self.birth_intensities[k - 1] if self.birth_intensities is not None else None
            particle = extend_backward(particle, filter_k, self.model, self.settings.murty_m, gate, rng, birth)
        return particle

    def simulate_particle(self, seed: int, stream: Tuple[int, ...]) -> Particle:
        """One particle; on failure the pass restarts with gating off at the failing step"""
        ungated: Set[int] = set()
        for attempt in range(self.settings.max_retries + 1):
            try:
                return self._backward_pass(_particle_rng(seed, stream + (attempt,)), ungated)
            except SmoothingFailure as failure:
                logger.info("particle %s attempt %d failed at k=%s", stream, attempt, failure.time_step)
                ungated.add(failure.time_step)
        raise SmoothingFailure(f"particle {stream} failed after {self.settings.max_retries} retries")

    def simulate(self, seed: int, stream: Tuple[int, ...] = (), workers: int = 1) -> List[Particle]:
        indices = range(self.settings.particles)
        if workers <= 1:
            return [self.simulate_particle(seed, stream + (i,)) for i in indices]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda i: self.simulate_particle(seed, stream + (i,)), indices))


def backward_simulate(filters: Sequence[FilterState], model: MotionModel, particles: int, m: int,
                      gate_probability: Optional[float], seed: int, stream: Tuple[int, ...] = (),
                      birth_intensities: Optional[Sequence[GaussianMixture]] = None,
                      workers: int = 1) -> List[Particle]:
    """Draw ``particles`` sets of trajectories on [1, K] from the smoothing density.

    Particle ``i`` uses its own generator seeded from ``(seed, *stream, i)``,
    so the result does not depend on ``workers``.
    """
    settings = SmootherSettings(particles=particles, murty_m=m, gate_probability=gate_probability)
    return BackwardSimulator(filters, model, settings, birth_intensities).simulate(seed, stream, workers)


def smoother_estimate(particles: Sequence[Particle]) -> TrajectorySet:
    """Trajectories of the particle with the largest accumulated log weight"""
    if not particles:
        raise DomainError("smoother_estimate needs at least one particle")
    best = max(range(len(particles)), key=lambda i: particles[i].accumulated_log_weight)
    return particles[best].trajectories


def trajectory_count(estimate: TrajectorySet) -> int:
    return len(estimate)
