from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np

from .errors import DomainError


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _matrix(value, name: str) -> np.ndarray:
    matrix = np.array(value, dtype=float)
    if matrix.ndim != 2:
        raise DomainError(f"{name} must be a 2-D matrix, got shape {matrix.shape}")
    return _readonly(matrix)


def _moments(mean, covariance) -> Tuple[np.ndarray, np.ndarray]:
    """Validated read-only mean vector and symmetric PSD covariance"""
    mean = np.array(mean, dtype=float).reshape(-1)
    cov = np.array(covariance, dtype=float)
    if cov.shape != (mean.size, mean.size):
        raise DomainError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
    scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
    if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12 * scale:
        raise DomainError("covariance is not symmetric")
    if cov.size and np.min(np.linalg.eigvalsh(cov)) < -1e-12 * abs(np.trace(cov)):
        raise DomainError("covariance is not positive semidefinite")
    return _readonly(mean), _readonly(cov)


def _probability(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return value


class HypothesisKind(Enum):
    SURVIVE = "survive"
    DIE = "die"
    NEWBORN = "newborn"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A single target path: birth time plus a contiguous state sequence"""
    birth_time: int
    states: np.ndarray  # shape (length, dim)

    def __post_init__(self):
        if int(self.birth_time) != self.birth_time or self.birth_time < 1:
            raise DomainError(f"birth_time must be an integer >= 1, got {self.birth_time}")
        states = np.array(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 1 or states.shape[1] < 1:
            raise DomainError(f"states must have shape (length >= 1, dim >= 1), got {states.shape}")
        object.__setattr__(self, "birth_time", int(self.birth_time))
        object.__setattr__(self, "states", _readonly(states))
        object.__setattr__(self, "_key", (self.birth_time, states.shape[0], states.tobytes()))

    @property
    def length(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def end_time(self) -> int:
        return self.birth_time + self.length - 1

    def present_at(self, k: int) -> bool:
        return self.birth_time <= k <= self.end_time

    def state_at(self, k: int) -> Optional[np.ndarray]:
        if not self.present_at(k):
            return None
        return self.states[k - self.birth_time]

    def prepend(self, state) -> "Trajectory":
        """Extend the trajectory one step into the past"""
        state = np.asarray(state, dtype=float).reshape(1, -1)
        return Trajectory(self.birth_time - 1, np.vstack([state, self.states]))

    def restrict(self, alpha: int, gamma: int) -> Optional["Trajectory"]:
        """Part of the trajectory inside [alpha, gamma], or None if it never overlaps"""
        start = max(alpha, self.birth_time)
        stop = min(gamma, self.end_time)
        if start > stop:
            return None
        return Trajectory(start, self.states[start - self.birth_time:stop - self.birth_time + 1])

    def key(self) -> tuple:
        return self._key

    def __eq__(self, other) -> bool:
        return isinstance(other, Trajectory) and self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __repr__(self) -> str:
        return f"Trajectory(birth_time={self.birth_time}, states={self.states.tolist()})"


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """Unordered set of trajectories, stored in canonical order"""
    elements: Tuple[Trajectory, ...] = ()

    def __post_init__(self):
        elements = tuple(sorted(self.elements, key=Trajectory.key))
        for previous, current in zip(elements, elements[1:]):
            if previous == current:
                raise DomainError(f"duplicate trajectory in set: {current!r}")
        dims = {trajectory.dim for trajectory in elements}
        if len(dims) > 1:
            raise DomainError(f"trajectories of mixed state dimension {sorted(dims)}")
        object.__setattr__(self, "elements", elements)

    @classmethod
    def of(cls, trajectories: Iterable[Trajectory]) -> "TrajectorySet":
        return cls(tuple(trajectories))

    def union(self, other: "TrajectorySet") -> "TrajectorySet":
        return TrajectorySet(self.elements + other.elements)

    @property
    def dim(self) -> Optional[int]:
        return self.elements[0].dim if self.elements else None

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.elements)

    def __contains__(self, trajectory) -> bool:
        return trajectory in self.elements

    def __eq__(self, other) -> bool:
        return isinstance(other, TrajectorySet) and self.elements == other.elements

    def __hash__(self) -> int:
        return hash(self.elements)


@dataclass(frozen=True, eq=False)
class GaussianDensity:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean, cov = _moments(self.mean, self.covariance)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class GaussianMixture:
    """Unnormalized Gaussian mixture, used as a Poisson intensity"""
    weights: Tuple[float, ...] = ()
    components: Tuple[GaussianDensity, ...] = ()

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        components = tuple(self.components)
        if len(weights) != len(components):
            raise DomainError("mixture needs one weight per component")
        if any(w < 0.0 for w in weights):
            raise DomainError("mixture weights must be nonnegative")
        if len({c.dim for c in components}) > 1:
            raise DomainError("mixture components have different dimensions")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)

    @property
    def total_weight(self) -> float:
        return float(sum(self.weights))

    def __len__(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class Bernoulli:
    existence: float
    density: GaussianDensity

    def __post_init__(self):
        object.__setattr__(self, "existence", _probability(self.existence, "existence"))


@dataclass(frozen=True)
class MultiBernoulli:
    components: Tuple[Bernoulli, ...] = ()

    def __post_init__(self):
        components = tuple(self.components)
        if len({b.density.dim for b in components}) > 1:
            raise DomainError("Bernoulli components have different dimensions")
        object.__setattr__(self, "components", components)

    @property
    def existence_probabilities(self) -> np.ndarray:
        return np.array([b.existence for b in self.components], dtype=float)

    @property
    def dim(self) -> Optional[int]:
        return self.components[0].density.dim if self.components else None

    def cardinality_pmf(self) -> np.ndarray:
        """Poisson-binomial distribution of the number of existing targets"""
        pmf = np.ones(1)
        for r in self.existence_probabilities:
            pmf = np.convolve(pmf, [1.0 - r, r])
        return pmf

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self) -> Iterator[Bernoulli]:
        return iter(self.components)

    def __getitem__(self, index: int) -> Bernoulli:
        return self.components[index]


@dataclass(frozen=True, eq=False)
class MotionModel:
    """Linear-Gaussian dynamics with constant survival and Poisson birth"""
    transition_matrix: np.ndarray
    process_noise: np.ndarray
    survival_probability: float
    birth_intensity: GaussianMixture = field(default_factory=GaussianMixture)

    def __post_init__(self):
        F = _matrix(self.transition_matrix, "transition_matrix")
        Q = _matrix(self.process_noise, "process_noise")
        if F.shape[0] != F.shape[1]:
            raise DomainError(f"transition_matrix must be square, got {F.shape}")
        if Q.shape != F.shape:
            raise DomainError(f"process_noise shape {Q.shape} does not match transition_matrix {F.shape}")
        # validates symmetry and PSD
        GaussianDensity(np.zeros(F.shape[0]), Q)
        birth = self.birth_intensity
        if len(birth) and birth.components[0].dim != F.shape[0]:
            raise DomainError("birth intensity dimension does not match the state dimension")
        object.__setattr__(self, "transition_matrix", F)
        object.__setattr__(self, "process_noise", Q)
        object.__setattr__(self, "survival_probability",
                           _probability(self.survival_probability, "survival_probability"))

    @property
    def dim(self) -> int:
        return self.transition_matrix.shape[0]


@dataclass(frozen=True, eq=False)
class SensorModel:
    measurement_matrix: np.ndarray
    measurement_noise: np.ndarray
    detection_probability: float
    clutter_rate: float
    surveillance_volume: float

    def __post_init__(self):
        H = _matrix(self.measurement_matrix, "measurement_matrix")
        R = _matrix(self.measurement_noise, "measurement_noise")
        if R.shape != (H.shape[0], H.shape[0]):
            raise DomainError(f"measurement_noise shape {R.shape} does not match measurement_matrix {H.shape}")
        GaussianDensity(np.zeros(H.shape[0]), R)
        if self.clutter_rate < 0:
            raise DomainError(f"clutter_rate must be >= 0, got {self.clutter_rate}")
        if self.surveillance_volume <= 0:
            raise DomainError(f"surveillance_volume must be > 0, got {self.surveillance_volume}")
        object.__setattr__(self, "measurement_matrix", H)
        object.__setattr__(self, "measurement_noise", R)
        object.__setattr__(self, "detection_probability",
                           _probability(self.detection_probability, "detection_probability"))
        object.__setattr__(self, "clutter_rate", float(self.clutter_rate))
        object.__setattr__(self, "surveillance_volume", float(self.surveillance_volume))

    @property
    def clutter_density(self) -> float:
        return self.clutter_rate / self.surveillance_volume

    @property
    def measurement_dim(self) -> int:
        return self.measurement_matrix.shape[0]

    @property
    def state_dim(self) -> int:
        return self.measurement_matrix.shape[1]


@dataclass(frozen=True)
class FilterState:
    time: int
    posterior: MultiBernoulli


@dataclass(frozen=True, eq=False)
class BackwardConditional:
    """Distribution of a state at k given its successor at k+1"""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean, cov = _moments(self.mean, self.covariance)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


@dataclass(frozen=True)
class SingleTrajectoryHypothesis:
    """One association of the backward kernel.

    SURVIVE links filter component ``component`` to surviving trajectory
    ``survivor``; DIE ends ``component`` at k; NEWBORN starts ``survivor``
    at k+1.
    """
    kind: HypothesisKind
    log_weight: float
    component: Optional[int] = None
    survivor: Optional[int] = None

    def __post_init__(self):
        needs_component = self.kind in (HypothesisKind.SURVIVE, HypothesisKind.DIE)
        needs_survivor = self.kind in (HypothesisKind.SURVIVE, HypothesisKind.NEWBORN)
        if needs_component != (self.component is not None) or needs_survivor != (self.survivor is not None):
            raise DomainError(f"{self.kind.value} hypothesis with component={self.component}, survivor={self.survivor}")


@dataclass(frozen=True)
class GlobalHypothesis:
    hypotheses: Tuple[SingleTrajectoryHypothesis, ...]
    log_weight: float
    log_probability: float = 0.0  # normalized within the truncated mixture

    def by_kind(self, kind: HypothesisKind) -> List[SingleTrajectoryHypothesis]:
        return [h for h in self.hypotheses if h.kind is kind]


@dataclass(frozen=True)
class Particle:
    trajectories: TrajectorySet
    start_time: int
    accumulated_log_weight: float = 0.0


@dataclass(frozen=True)
class Assignment:
    row_to_col: Tuple[int, ...]
    cost: float


@dataclass(frozen=True)
class GospaResult:
    total: float
    localization: float
    missed: float
    false_: float


@dataclass
class ValidationResult:
    """Result of configuration validation"""
    is_valid: bool
    warnings: List[str]
    errors: List[str]
    suggestions: List[str]
