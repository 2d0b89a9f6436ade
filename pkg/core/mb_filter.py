"""Multi-Bernoulli forward filter with Murty-truncated data association."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .assignment import murty_kbest
from .errors import DomainError, InfeasibleAssignmentError
from .gaussian import gate_threshold, innovation_mahalanobis_sq, kalman_update, predict_moments
from .models import (Bernoulli, FilterState, GaussianDensity, GaussianMixture, MotionModel, MultiBernoulli,
                     SensorModel)

logger = logging.getLogger(__name__)

LOG_FLOOR = np.log(1e-300)
REDUCTION_MODES = ("marginal", "best")


@dataclass(frozen=True)
class FilterSettings:
    max_hypotheses: int = 30
    prune_threshold: float = 1e-3
    reduction: str = "marginal"
    gate_probability: float = 0.999
    split_births: bool = True

    def __post_init__(self):
        if self.max_hypotheses < 1:
            raise DomainError(f"max_hypotheses must be >= 1, got {self.max_hypotheses}")
        if not 0.0 <= self.prune_threshold < 1.0:
            raise DomainError(f"prune_threshold must lie in [0, 1), got {self.prune_threshold}")
        if self.reduction not in REDUCTION_MODES:
            raise DomainError(f"reduction must be one of {REDUCTION_MODES}, got {self.reduction!r}")
        if not 0.0 < self.gate_probability <= 1.0:
            raise DomainError(f"gate_probability must lie in (0, 1], got {self.gate_probability}")


def _measurement_array(measurements, dim: int) -> np.ndarray:
    Z = np.asarray(measurements, dtype=float)
    if Z.size == 0:
        return np.zeros((0, dim))
    if Z.ndim == 1:
        Z = Z.reshape(1, -1)
    if Z.ndim != 2 or Z.shape[1] != dim:
        raise DomainError(f"measurements must have shape (m, {dim}), got {Z.shape}")
    return Z


def filter_predict(state: FilterState, model: MotionModel,
                   birth_intensity: Optional[GaussianMixture] = None) -> FilterState:
    birth = model.birth_intensity if birth_intensity is None else birth_intensity
    p_s = model.survival_probability
    components = [Bernoulli(b.existence * p_s, predict_moments(b.density, model)) for b in state.posterior]
    components += [Bernoulli(min(1.0, w), c) for w, c in zip(birth.weights, birth.components)]
    return FilterState(time=state.time + 1, posterior=MultiBernoulli(tuple(components)))


def _association_costs(mb: MultiBernoulli, Z: np.ndarray, sensor: SensorModel,
                       threshold: float) -> Tuple[np.ndarray, List[List[Optional[GaussianDensity]]]]:
    """Cost matrix [detections | misdetection diagonal] and the detection updates.

    Costs are normalized by the clutter intensity so unassigned measurement
    columns are clutter at zero cost.
    """
    n, m = len(mb), Z.shape[0]
    p_d = sensor.detection_probability
    density = sensor.clutter_density
    log_clutter = max(np.log(density), LOG_FLOOR) if density > 0.0 else LOG_FLOOR
    cost = np.full((n, m + n), np.inf)
    updates: List[List[Optional[GaussianDensity]]] = [[None] * m for _ in range(n)]
    for i, bernoulli in enumerate(mb):
        r = bernoulli.existence
        miss = 1.0 - r * p_d
        if miss > 0.0:
            cost[i, m + i] = -np.log(miss)
        if r == 0.0 or p_d == 0.0:
            continue
        for j, z in enumerate(Z):
            if innovation_mahalanobis_sq(bernoulli.density, z, sensor) > threshold:
                continue
            updated, log_likelihood = kalman_update(bernoulli.density, z, sensor)
            cost[i, j] = -(np.log(r) + np.log(p_d) + log_likelihood - log_clutter)
            updates[i][j] = updated
    return cost, updates


def _merge(weights: Sequence[float], densities: Sequence[GaussianDensity]) -> GaussianDensity:
    """Moment-matched single Gaussian of a weighted mixture"""
    if len(densities) == 1:
        return densities[0]
    w = np.asarray(weights) / np.sum(weights)
    means = np.array([d.mean for d in densities])
    mean = w @ means
    covariance = np.zeros((mean.size, mean.size))
    for weight, d in zip(w, densities):
        spread = d.mean - mean
        covariance += weight * (d.covariance + np.outer(spread, spread))
    return GaussianDensity(mean, 0.5 * (covariance + covariance.T))


def filter_update(state: FilterState, measurements, sensor: SensorModel, max_hypotheses: int = 30,
                  reduction: str = "marginal", gate_probability: float = 0.999, newborn: int = 0) -> FilterState:
    """Bayes update of a multi-Bernoulli density with one scan of measurements.

    Global association hypotheses come from Murty's algorithm; the resulting
    multi-Bernoulli mixture is reduced either to its best hypothesis or by
    marginalizing each Bernoulli over the hypotheses. The last ``newborn``
    components are birth Bernoullis entering at this scan: each of their
    association branches becomes a Bernoulli of its own instead of being
    merged.
    """
    if reduction not in REDUCTION_MODES:
        raise DomainError(f"reduction must be one of {REDUCTION_MODES}, got {reduction!r}")
    mb = state.posterior
    Z = _measurement_array(measurements, sensor.measurement_dim)
    if len(mb) == 0:
        return state
    if mb.dim != sensor.state_dim:
        raise DomainError(f"state dimension {mb.dim} does not match sensor state dimension {sensor.state_dim}")

    threshold = np.inf if gate_probability >= 1.0 else gate_threshold(gate_probability, sensor.measurement_dim)
    cost, updates = _association_costs(mb, Z, sensor, threshold)
    hypotheses = murty_kbest(cost, max_hypotheses)
    if not hypotheses and np.isfinite(threshold):
        logger.info("k=%d: no feasible association inside the gates, retrying ungated", state.time)
        cost, updates = _association_costs(mb, Z, sensor, np.inf)
        hypotheses = murty_kbest(cost, max_hypotheses)
    if not hypotheses:
        raise InfeasibleAssignmentError(f"k={state.time}: no feasible measurement association")

    log_weights = np.array([-h.cost for h in hypotheses])
    probabilities = np.exp(log_weights - logsumexp(log_weights))
    if reduction == "best":
        probabilities = np.zeros(len(hypotheses))
        probabilities[0] = 1.0

    p_d = sensor.detection_probability
    m = Z.shape[0]
    components, spawned = [], []
    first_newborn = len(mb) - newborn
    for i, bernoulli in enumerate(mb):
        r = bernoulli.existence
        missed_r = r * (1.0 - p_d) / (1.0 - r * p_d) if r * p_d < 1.0 else 0.0
        branches = {}  # column -> (weight, existence, density)
        for beta, h in zip(probabilities, hypotheses):
            if beta == 0.0:
                continue
            column = h.row_to_col[i]
            if column < m:
                existence, density = 1.0, updates[i][column]
            else:
                column, existence, density = -1, missed_r, bernoulli.density
            weight, _, _ = branches.get(column, (0.0, existence, density))
            branches[column] = (weight + beta, existence, density)
        ordered = sorted(branches.items())
        if i >= first_newborn:
            spawned += [Bernoulli(min(1.0, weight * existence), density)
                        for _, (weight, existence, density) in ordered if weight * existence > 0.0]
            continue
        posterior_r = sum(weight * existence for _, (weight, existence, _) in ordered)
        mass = [(weight * existence, density) for _, (weight, existence, density) in ordered
                if weight * existence > 0.0]
        density = _merge([w for w, _ in mass], [d for _, d in mass]) if mass else bernoulli.density
        components.append(Bernoulli(min(1.0, max(0.0, posterior_r)), density))
    return FilterState(time=state.time, posterior=MultiBernoulli(tuple(components + spawned)))


def filter_estimate(state: FilterState) -> List[np.ndarray]:
    """Means of the MAP-cardinality most likely components"""
    mb = state.posterior
    if len(mb) == 0:
        return []
    count = int(np.argmax(mb.cardinality_pmf()))
    order = sorted(range(len(mb)), key=lambda i: (-mb[i].existence, i))
    return [mb[i].density.mean.copy() for i in order[:count]]


def prune_multi_bernoulli(mb: MultiBernoulli, threshold: float) -> MultiBernoulli:
    return MultiBernoulli(tuple(b for b in mb if b.existence >= threshold))


def undetected_intensities(model: MotionModel, sensor: SensorModel, horizon: int,
                           prune_threshold: float = 1e-3) -> List[GaussianMixture]:
    """Predicted intensity of targets that were never detected, at k = 2..horizon.

    Entry ``k - 1`` is the intensity at k+1, usable in place of the birth
    intensity in the backward step from k+1 to k.
    """
    birth = model.birth_intensity
    miss = model.survival_probability * (1.0 - sensor.detection_probability)
    weights, components = list(birth.weights), list(birth.components)
    intensities = []
    for _ in range(1, horizon):
        weights = [miss * w for w in weights] + list(birth.weights)
        components = [predict_moments(c, model) for c in components] + list(birth.components)
        kept = [i for i, w in enumerate(weights) if w >= prune_threshold]
        weights = [weights[i] for i in kept]
        components = [components[i] for i in kept]
        intensities.append(GaussianMixture(tuple(weights), tuple(components)))
    return intensities


class MultiBernoulliFilter:
    """Runs predict, update and pruning over a sequence of scans"""

    def __init__(self, model: MotionModel, sensor: SensorModel, settings: FilterSettings = None):
        self.model = model
        self.sensor = sensor
        self.settings = settings or FilterSettings()
        birth = model.birth_intensity
        kept = [(w, c) for w, c in zip(birth.weights, birth.components) if w >= self.settings.prune_threshold]
        self.birth = GaussianMixture(tuple(w for w, _ in kept), tuple(c for _, c in kept))

    def step(self, state: FilterState, measurements) -> FilterState:
        predicted = filter_predict(state, self.model, self.birth)
        updated = filter_update(predicted, measurements, self.sensor, self.settings.max_hypotheses,
                                self.settings.reduction, self.settings.gate_probability,
                                newborn=len(self.birth) if self.settings.split_births else 0)
        pruned = prune_multi_bernoulli(updated.posterior, self.settings.prune_threshold)
        if len(pruned) != len(updated.posterior):
            logger.debug("k=%d: pruned %d Bernoulli components", updated.time,
                         len(updated.posterior) - len(pruned))
        return FilterState(time=updated.time, posterior=pruned)

    def run(self, scans: Sequence) -> List[FilterState]:
        """Filtering densities for k = 1..len(scans)"""
        state = FilterState(time=0, posterior=MultiBernoulli())
        states = []
        for measurements in scans:
            state = self.step(state, measurements)
            states.append(state)
        return states
