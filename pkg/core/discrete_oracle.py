"""Exact Bayes by enumeration for a finite-state trajectory model.

States are integers 0..S-1. A trajectory is ``(birth_time, states)`` and a
set of trajectories is a sorted tuple of them. Identical trajectories may
repeat, since coincidences have positive probability in a discrete space.
All densities are Janossy densities: the probability of a set divided by
the product of the factorials of its multiplicities.

Targets present at k = 1 come from an initial multi-Bernoulli plus Poisson
births; later targets come from Poisson births. The enumeration keeps sets
of at most ``max_targets`` trajectories and renormalizes over them.

The cap couples every trajectory to every other one: the filtered density
of a window is conditioned on the number of targets outside it staying
under the cap. Ratio checks therefore only compare windows that leave
``CAP_HEADROOM`` free slots, so that a capped extension needs at least
``CAP_HEADROOM + 1`` further births and its effect is of that order in
the birth rate.
"""
import itertools
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .errors import ConfigError, DomainError, EnumerationLimitError

logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10 ** 6
IDENTITY_TOLERANCE = 1e-12
TRUNCATION_LIMIT = 1e-9
CAP_HEADROOM = 1
INSTANCES_PATH = Path(__file__).resolve().parent.parent / "scenarios" / "oracle" / "instances.yaml"

DiscreteTrajectory = Tuple[int, Tuple[int, ...]]
DiscreteSet = Tuple[DiscreteTrajectory, ...]
StateSet = Tuple[int, ...]


def _stochastic(matrix: np.ndarray, name: str):
    if np.any(matrix < 0) or not np.allclose(matrix.sum(axis=-1), 1.0, rtol=0.0, atol=1e-12):
        raise DomainError(f"{name} rows must be probability vectors")


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    state_count: int
    transition: np.ndarray  # (S, S), rows sum to one
    survival_probability: float
    birth_intensity: np.ndarray  # (S,)
    horizon: int
    max_targets: int
    likelihood: np.ndarray  # (S, A) measurement symbol distribution per state
    detection_probability: float
    clutter_rate: float
    clutter_distribution: np.ndarray  # (A,)
    initial: Tuple[Tuple[float, Tuple[float, ...]], ...] = ()  # Bernoullis at k = 1
    name: str = "instance"

    def __post_init__(self):
        S = self.state_count
        transition = np.array(self.transition, dtype=float)
        birth = np.array(self.birth_intensity, dtype=float)
        likelihood = np.array(self.likelihood, dtype=float)
        clutter = np.array(self.clutter_distribution, dtype=float)
        if transition.shape != (S, S) or birth.shape != (S,) or likelihood.ndim != 2 or likelihood.shape[0] != S:
            raise DomainError(f"{self.name}: model arrays do not match state_count={S}")
        if clutter.shape != (likelihood.shape[1],):
            raise DomainError(f"{self.name}: clutter distribution does not match the alphabet size")
        _stochastic(transition, "transition")
        _stochastic(likelihood, "likelihood")
        _stochastic(clutter, "clutter_distribution")
        if np.any(birth < 0):
            raise DomainError(f"{self.name}: birth intensity must be nonnegative")
        for value, what in ((self.survival_probability, "survival_probability"),
                            (self.detection_probability, "detection_probability")):
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{self.name}: {what} must lie in [0, 1], got {value}")
        if self.clutter_rate < 0 or self.horizon < 1 or self.max_targets < 0:
            raise DomainError(f"{self.name}: invalid clutter rate, horizon or max_targets")
        initial = []
        for existence, pmf in self.initial:
            pmf = tuple(float(p) for p in pmf)
            if not 0.0 <= existence <= 1.0 or len(pmf) != S:
                raise DomainError(f"{self.name}: invalid initial Bernoulli ({existence}, {pmf})")
            _stochastic(np.array(pmf), "initial pmf")
            initial.append((float(existence), pmf))
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "birth_intensity", birth)
        object.__setattr__(self, "likelihood", likelihood)
        object.__setattr__(self, "clutter_distribution", clutter)
        object.__setattr__(self, "initial", tuple(initial))

    @property
    def alphabet_size(self) -> int:
        return self.likelihood.shape[1]

    @property
    def total_birth(self) -> float:
        return float(self.birth_intensity.sum())


@dataclass(frozen=True)
class OracleInstance:
    model: DiscreteModel
    observations: Tuple[Tuple[int, ...], ...]


@dataclass
class OracleReport:
    name: str
    set_count: int
    truncation_mass: float
    forward_backward: float
    window_ratio: float
    multi_step: float
    predicted: float
    birth_mass: float = 0.0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _end(trajectory: DiscreteTrajectory) -> int:
    return trajectory[0] + len(trajectory[1]) - 1


def multiplicity_factor(items) -> int:
    return math.prod(math.factorial(c) for c in Counter(items).values())


def restrict_set(X: DiscreteSet, alpha: int, gamma: int) -> DiscreteSet:
    parts = []
    for birth, states in X:
        start, stop = max(alpha, birth), min(gamma, birth + len(states) - 1)
        if start <= stop:
            parts.append((start, states[start - birth:stop - birth + 1]))
    return tuple(sorted(parts))


def states_at_time(X: DiscreteSet, k: int) -> StateSet:
    return tuple(sorted(states[k - birth] for birth, states in X if birth <= k <= birth + len(states) - 1))


def _all_trajectories(model: DiscreteModel) -> List[DiscreteTrajectory]:
    K, S = model.horizon, model.state_count
    return sorted((birth, states)
                  for birth in range(1, K + 1)
                  for length in range(1, K - birth + 2)
                  for states in itertools.product(range(S), repeat=length))


def enumerate_trajectory_sets(model: DiscreteModel, limit: int = ENUMERATION_LIMIT) -> List[DiscreteSet]:
    """Every set of at most ``max_targets`` trajectories inside [1, K]"""
    trajectories = _all_trajectories(model)
    count = sum(math.comb(len(trajectories) + n - 1, n) for n in range(model.max_targets + 1))
    if count > limit:
        raise EnumerationLimitError(count, limit)
    return [combo for n in range(model.max_targets + 1)
            for combo in itertools.combinations_with_replacement(trajectories, n)]


def _initial_janossy(model: DiscreteModel, states: Sequence[int]) -> float:
    """Janossy density of the initial multi-Bernoulli at a list of states"""
    components = model.initial
    if len(states) > len(components):
        return 0.0
    total = 0.0
    for chosen in itertools.permutations(range(len(components)), len(states)):
        value = 1.0
        for state, c in zip(states, chosen):
            existence, pmf = components[c]
            value *= existence * pmf[state]
        for c in set(range(len(components))) - set(chosen):
            value *= 1.0 - components[c][0]
        total += value
    return total


def _dynamics(model: DiscreteModel, states: Sequence[int], end: int, gamma: int) -> float:
    """Transitions along ``states`` and the death factor unless the trajectory reaches gamma"""
    p_s = model.survival_probability
    value = 1.0
    for a, b in zip(states, states[1:]):
        value *= p_s * model.transition[a, b]
    return value if end == gamma else value * (1.0 - p_s)


def prior_janossy(model: DiscreteModel, X: DiscreteSet) -> float:
    """Janossy density of a set of trajectories on [1, K] under the untruncated prior"""
    K = model.horizon
    lam = model.birth_intensity
    value = math.exp(-K * model.total_birth)
    first = [states[0] for birth, states in X if birth == 1]
    for birth, states in X:
        if birth > 1:
            value *= lam[states[0]]
        value *= _dynamics(model, states, _end((birth, states)), K)
    # targets present at k = 1 split between the initial MB and Poisson births
    split = 0.0
    for size in range(len(first) + 1):
        for chosen in itertools.combinations(range(len(first)), size):
            term = _initial_janossy(model, [first[i] for i in chosen])
            for i in set(range(len(first))) - set(chosen):
                term *= lam[first[i]]
            split += term
    return value * split


def scan_likelihood(model: DiscreteModel, alive: Sequence[int], scan: Sequence[int]) -> float:
    """Likelihood of one scan of symbols given the states of the alive targets"""
    p_d, clutter = model.detection_probability, model.clutter_rate * model.clutter_distribution

    def recurse(i: int, used: frozenset) -> float:
        if i == len(alive):
            value = 1.0
            for j, symbol in enumerate(scan):
                if j not in used:
                    value *= clutter[symbol]
            return value
        total = (1.0 - p_d) * recurse(i + 1, used)
        for j, symbol in enumerate(scan):
            if j not in used:
                total += p_d * model.likelihood[alive[i], symbol] * recurse(i + 1, used | {j})
        return total

    return math.exp(-model.clutter_rate) * recurse(0, frozenset())


def _check_observations(model: DiscreteModel, observations):
    if len(observations) > model.horizon:
        raise DomainError(f"{len(observations)} scans for a horizon of {model.horizon}")
    for scan in observations:
        if any(not 0 <= s < model.alphabet_size for s in scan):
            raise DomainError(f"scan {scan} has symbols outside 0..{model.alphabet_size - 1}")


class Enumeration:
    """All enumerated sets of a model with their truncated prior probabilities"""

    def __init__(self, model: DiscreteModel, limit: int = ENUMERATION_LIMIT):
        self.model = model
        self.sets = enumerate_trajectory_sets(model, limit)
        self.prior = [prior_janossy(model, X) / multiplicity_factor(X) for X in self.sets]
        self.truncation_mass = max(0.0, 1.0 - math.fsum(self.prior))

    def posterior(self, observations) -> Dict[DiscreteSet, float]:
        _check_observations(self.model, observations)
        weights = []
        for X, weight in zip(self.sets, self.prior):
            for k, scan in enumerate(observations, start=1):
                if weight == 0.0:
                    break
                weight *= scan_likelihood(self.model, states_at_time(X, k), scan)
            weights.append(weight)
        total = math.fsum(weights)
        if total <= 0.0:
            raise DomainError(f"{self.model.name}: observations have zero total likelihood")
        return {X: w / total for X, w in zip(self.sets, weights)}


def exact_posterior(model: DiscreteModel, observations) -> Dict[DiscreteSet, float]:
    """Posterior probability of every enumerated set given the scans for k = 1..len(observations)"""
    return Enumeration(model).posterior(observations)


def truncation_mass(model: DiscreteModel) -> float:
    """Prior probability of the sets the enumeration leaves out"""
    return Enumeration(model).truncation_mass


def window_janossy(posterior: Dict[DiscreteSet, float], alpha: int, gamma: int) -> Dict[DiscreteSet, float]:
    """Janossy density of the restriction to [alpha, gamma]"""
    mass: Dict[DiscreteSet, float] = {}
    for X, probability in posterior.items():
        W = restrict_set(X, alpha, gamma)
        mass[W] = mass.get(W, 0.0) + probability
    return {W: p * multiplicity_factor(W) for W, p in mass.items()}


def state_janossy(posterior: Dict[DiscreteSet, float], k: int) -> Dict[StateSet, float]:
    """Janossy density of the set of states at time k"""
    mass: Dict[StateSet, float] = {}
    for X, probability in posterior.items():
        x = states_at_time(X, k)
        mass[x] = mass.get(x, 0.0) + probability
    return {x: p * multiplicity_factor(x) for x, p in mass.items()}


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator > 0.0 else 0.0


def check_forward_backward(model: DiscreteModel, observations, enumeration: Enumeration = None) -> float:
    """Max absolute gap between the smoothed window density and its forward-backward factorization"""
    enumeration = enumeration or Enumeration(model)
    K = model.horizon
    smoothed = enumeration.posterior(observations)
    worst = 0.0
    for k in range(1, K):
        filtered = enumeration.posterior(observations[:k])
        lhs = window_janossy(smoothed, k, K)
        pair = window_janossy(filtered, k, k + 1)
        future = window_janossy(smoothed, k + 1, K)
        predicted = state_janossy(filtered, k + 1)
        for W, value in lhs.items():
            rhs = _ratio(pair.get(restrict_set(W, k, k + 1), 0.0) * future.get(restrict_set(W, k + 1, K), 0.0),
                         predicted.get(states_at_time(W, k + 1), 0.0))
            worst = max(worst, abs(value - rhs))
    return worst


def birth_mass(posterior: Dict[DiscreteSet, float]) -> float:
    """Probability of the sets holding a trajectory born after k = 1"""
    return math.fsum(p for X, p in posterior.items() if any(birth > 1 for birth, _ in X))


def check_window_ratio(model: DiscreteModel, observations, enumeration: Enumeration = None,
                       floor: float = IDENTITY_TOLERANCE, headroom: int = CAP_HEADROOM) -> float:
    """Max relative gap of the ratio identity for windows [k, gamma].

    A window W is compared when both denominators exceed ``floor`` and
    ``len(W)`` plus the initial components plus ``headroom`` fits under
    ``max_targets``. With ``headroom=0`` every window is compared and the
    cap shows up as a gap of the order of the birth rate.
    """
    enumeration = enumeration or Enumeration(model)
    K = model.horizon
    # without births the cap never binds once the initial components fit
    capacity = model.max_targets - len(model.initial) - headroom if model.total_birth > 0 else math.inf
    worst = 0.0
    for k in range(1, K):
        filtered = enumeration.posterior(observations[:k])
        pair = window_janossy(filtered, k, k + 1)
        predicted = state_janossy(filtered, k + 1)
        for gamma in range(k + 1, K + 1):
            longer = window_janossy(filtered, k, gamma)
            shorter = window_janossy(filtered, k + 1, gamma)
            for W, value in longer.items():
                if len(W) > capacity:
                    continue
                denominator_left = shorter.get(restrict_set(W, k + 1, gamma), 0.0)
                denominator_right = predicted.get(states_at_time(W, k + 1), 0.0)
                if denominator_left <= floor or denominator_right <= floor:
                    continue
                left = value / denominator_left
                right = pair.get(restrict_set(W, k, k + 1), 0.0) / denominator_right
                if right == 0.0:
                    gap = 0.0 if left == 0.0 else math.inf
                else:
                    gap = abs(left - right) / abs(right)
                worst = max(worst, gap)
    return worst


def _predict(model: DiscreteModel, base: Callable[[DiscreteSet], float], X: DiscreteSet,
             eta: int, gamma: int) -> float:
    """Multi-step prediction of a window density on [1, eta] to a set X on [1, gamma]"""
    lam = model.birth_intensity
    value = base(restrict_set(X, 1, eta)) * math.exp(-(gamma - eta) * model.total_birth)
    for birth, states in X:
        end = _end((birth, states))
        if birth > eta:
            value *= lam[states[0]] * _dynamics(model, states, end, gamma)
        elif end >= eta:
            value *= _dynamics(model, states[eta - birth:], end, gamma)
    return value


def check_multi_step_prediction(model: DiscreteModel, observations=(), enumeration: Enumeration = None) -> float:
    """Max gap between two composed one-step predictions and the direct two-step prediction"""
    enumeration = enumeration or Enumeration(model)
    worst = 0.0
    for eta in range(1, model.horizon - 1):
        filtered = enumeration.posterior(observations[:eta])
        window = window_janossy(filtered, 1, eta)

        def base(W: DiscreteSet) -> float:
            return window.get(W, 0.0)

        def one_step(W: DiscreteSet) -> float:
            return _predict(model, base, W, eta, eta + 1)

        targets = {restrict_set(X, 1, eta + 2) for X in enumeration.sets}
        for X in sorted(targets):
            direct = _predict(model, base, X, eta, eta + 2)
            composed = _predict(model, one_step, X, eta + 1, eta + 2)
            worst = max(worst, abs(direct - composed))
    return worst


def check_predicted_density(model: DiscreteModel, observations, enumeration: Enumeration = None) -> float:
    """Max gap between the enumerated one-step window density and its closed form"""
    enumeration = enumeration or Enumeration(model)
    p_s = model.survival_probability
    lam = model.birth_intensity
    worst = 0.0
    for k in range(1, model.horizon):
        filtered = enumeration.posterior(observations[:k])
        current = state_janossy(filtered, k)
        for W, value in window_janossy(filtered, k, k + 1).items():
            closed = current.get(states_at_time(W, k), 0.0) * math.exp(-model.total_birth)
            for birth, states in W:
                if birth == k + 1:
                    closed *= lam[states[0]]
                elif len(states) == 1:
                    closed *= 1.0 - p_s
                else:
                    closed *= p_s * model.transition[states[0], states[1]]
            worst = max(worst, abs(value - closed))
    return worst


def run_oracle_checks(instance: OracleInstance, tolerance: float = IDENTITY_TOLERANCE) -> OracleReport:
    model, observations = instance.model, instance.observations
    enumeration = Enumeration(model)
    report = OracleReport(
        name=model.name,
        set_count=len(enumeration.sets),
        truncation_mass=enumeration.truncation_mass,
        forward_backward=check_forward_backward(model, observations, enumeration),
        window_ratio=check_window_ratio(model, observations, enumeration),
        multi_step=check_multi_step_prediction(model, observations, enumeration),
        predicted=check_predicted_density(model, observations, enumeration),
        birth_mass=birth_mass(enumeration.posterior(observations)),
    )
    if report.truncation_mass >= TRUNCATION_LIMIT:
        report.failures.append(f"truncation mass {report.truncation_mass:.3e} >= {TRUNCATION_LIMIT:.0e}")
    for label in ("forward_backward", "window_ratio", "multi_step"):
        if getattr(report, label) > tolerance:
            report.failures.append(f"{label} gap {getattr(report, label):.3e} > {tolerance:.0e}")
    if report.predicted > max(tolerance, 10.0 * report.truncation_mass):
        report.failures.append(f"predicted-density gap {report.predicted:.3e}")
    logger.info("oracle %s: %d sets, failures=%s", model.name, report.set_count, report.failures)
    return report


def model_from_profile(entry: Dict) -> OracleInstance:
    try:
        model = DiscreteModel(
            state_count=int(entry["state_count"]),
            transition=entry["transition"],
            survival_probability=float(entry["survival_probability"]),
            birth_intensity=entry["birth_intensity"],
            horizon=int(entry["horizon"]),
            max_targets=int(entry["max_targets"]),
            likelihood=entry["likelihood"],
            detection_probability=float(entry["detection_probability"]),
            clutter_rate=float(entry["clutter_rate"]),
            clutter_distribution=entry["clutter_distribution"],
            initial=tuple((float(b["existence"]), tuple(b["pmf"])) for b in entry.get("initial", [])),
            name=str(entry.get("name", "instance")),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed oracle instance {entry.get('name', '?')!r}: {exc}") from exc
    observations = tuple(tuple(int(s) for s in scan) for scan in entry.get("observations", []))
    return OracleInstance(model, observations)


def load_oracle_instances(path: Optional[Path] = None) -> List[OracleInstance]:
    path = Path(path) if path else INSTANCES_PATH
    if not path.exists():
        raise ConfigError(f"oracle instances file '{path}' not found")
    with open(path, "r") as f:
        document = yaml.safe_load(f) or {}
    return [model_from_profile(entry) for entry in document.get("instances", [])]
