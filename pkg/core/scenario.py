"""Ground truth and measurement simulation, plus YAML scenario profiles."""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import yaml

from .errors import ConfigError, DomainError
from .models import GaussianDensity, GaussianMixture, MotionModel, SensorModel, Trajectory, TrajectorySet

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

# Registry of shipped scenario profiles
SCENARIO_REGISTRY: Dict[str, Path] = {
    "crossing": SCENARIO_DIR / "crossing",
    "single_target": SCENARIO_DIR / "single_target",
    "quick": SCENARIO_DIR / "quick",
}


@dataclass(frozen=True)
class TargetSchedule:
    birth_time: int
    death_time: int  # first step at which the target is gone
    initial_state: Tuple[float, ...]


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    horizon: int
    targets: Tuple[TargetSchedule, ...]
    motion: MotionModel
    sensor: SensorModel
    region: np.ndarray  # (position dims, 2) box of [low, high] rows
    name: str = "custom"

    def __post_init__(self):
        region = np.array(self.region, dtype=float)
        if region.ndim != 2 or region.shape[1] != 2 or np.any(region[:, 0] >= region[:, 1]):
            raise DomainError(f"region must be rows of [low, high] with low < high, got {region.tolist()}")
        if region.shape[0] != self.sensor.measurement_dim:
            raise DomainError("region dimension must match the measurement dimension")
        if self.horizon < 1:
            raise DomainError(f"horizon must be >= 1, got {self.horizon}")
        for target in self.targets:
            if not 1 <= target.birth_time < target.death_time <= self.horizon + 1:
                raise DomainError(f"target schedule ({target.birth_time}, {target.death_time}) "
                                  f"outside 1 <= birth < death <= {self.horizon + 1}")
            if len(target.initial_state) != self.motion.dim:
                raise DomainError(f"initial state {target.initial_state} does not have dimension {self.motion.dim}")
            position = self.sensor.measurement_matrix @ np.asarray(target.initial_state)
            if np.any(position < region[:, 0]) or np.any(position > region[:, 1]):
                raise DomainError(f"initial position {position.tolist()} lies outside the region")
        object.__setattr__(self, "region", region)
        object.__setattr__(self, "targets", tuple(self.targets))


def generate_truth(cfg: ScenarioConfig, rng: np.random.Generator) -> TrajectorySet:
    F, Q = cfg.motion.transition_matrix, cfg.motion.process_noise
    zero = np.zeros(cfg.motion.dim)
    noiseless = not np.any(Q)
    trajectories = []
    for target in cfg.targets:
        states = [np.asarray(target.initial_state, dtype=float)]
        for _ in range(target.birth_time + 1, target.death_time):
            noise = zero if noiseless else rng.multivariate_normal(zero, Q, method="eigh")
            states.append(F @ states[-1] + noise)
        trajectories.append(Trajectory(target.birth_time, np.array(states)))
    return TrajectorySet.of(trajectories)


def generate_measurements(truth: TrajectorySet, sensor: SensorModel, region, rng: np.random.Generator,
                          horizon: int) -> List[np.ndarray]:
    """Scans for k = 1..horizon: detections of alive targets followed by clutter"""
    region = np.asarray(region, dtype=float)
    H, R = sensor.measurement_matrix, sensor.measurement_noise
    dim = sensor.measurement_dim
    zero = np.zeros(dim)
    scans = []
    for k in range(1, horizon + 1):
        detections = []
        for trajectory in truth:
            if not trajectory.present_at(k):
                continue
            if rng.random() < sensor.detection_probability:
                noise = rng.multivariate_normal(zero, R, method="eigh") if np.any(R) else zero
                detections.append(H @ trajectory.state_at(k) + noise)
        clutter_count = rng.poisson(sensor.clutter_rate)
        clutter = rng.uniform(region[:, 0], region[:, 1], size=(clutter_count, dim))
        scans.append(np.vstack([np.array(detections).reshape(-1, dim), clutter]))
    return scans


def constant_velocity_model(spatial_dims: int, dt: float, process_noise_std: float,
                            survival_probability: float, birth_intensity: GaussianMixture = None) -> MotionModel:
    """Nearly-constant-velocity model, state ordered positions then velocities"""
    eye = np.eye(spatial_dims)
    F = np.block([[eye, dt * eye], [np.zeros_like(eye), eye]])
    Q = process_noise_std ** 2 * np.eye(2 * spatial_dims)
    return MotionModel(F, Q, survival_probability, birth_intensity or GaussianMixture())


def position_sensor(spatial_dims: int, measurement_noise_std: float, detection_probability: float,
                    clutter_rate: float, surveillance_volume: float) -> SensorModel:
    H = np.hstack([np.eye(spatial_dims), np.zeros((spatial_dims, spatial_dims))])
    R = measurement_noise_std ** 2 * np.eye(spatial_dims)
    return SensorModel(H, R, detection_probability, clutter_rate, surveillance_volume)


def _section(profile: Dict[str, Any], key: str, source: str) -> Any:
    if key not in profile:
        raise ConfigError(f"{source}: missing '{key}'")
    return profile[key]


def scenario_from_profile(profile: Dict[str, Any], name: str = "custom") -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed scenario.yaml mapping"""
    try:
        region = np.array(_section(profile, "region", name), dtype=float)
        spatial_dims = region.shape[0]
        motion = _section(profile, "motion", name)
        sensor = _section(profile, "sensor", name)
        if motion.get("model", "constant_velocity") != "constant_velocity":
            raise ConfigError(f"{name}: unsupported motion model {motion.get('model')!r}")
        birth_weights, birth_components = [], []
        for component in profile.get("birth", []):
            std = np.asarray(component["std"], dtype=float)
            birth_weights.append(float(component["weight"]))
            birth_components.append(GaussianDensity(component["mean"], np.diag(std ** 2)))
        birth = GaussianMixture(tuple(birth_weights), tuple(birth_components))
        motion_model = constant_velocity_model(spatial_dims, float(motion.get("dt", 1.0)),
                                               float(motion["process_noise_std"]),
                                               float(motion["survival_probability"]), birth)
        volume = float(np.prod(region[:, 1] - region[:, 0]))
        sensor_model = position_sensor(spatial_dims, float(sensor["measurement_noise_std"]),
                                       float(sensor["detection_probability"]), float(sensor["clutter_rate"]), volume)
        targets = tuple(TargetSchedule(int(t["birth"]), int(t["death"]), tuple(float(v) for v in t["state"]))
                        for t in profile.get("targets", []))
        return ScenarioConfig(int(_section(profile, "horizon", name)), targets, motion_model, sensor_model,
                              region, name=name)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{name}: malformed scenario profile ({exc})") from exc
    except DomainError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_scenario(name_or_path: Union[str, Path]) -> ScenarioConfig:
    """Load a shipped scenario by name, or a scenario.yaml by path"""
    if str(name_or_path) in SCENARIO_REGISTRY:
        path = SCENARIO_REGISTRY[str(name_or_path)] / "scenario.yaml"
        name = str(name_or_path)
    else:
        path = Path(name_or_path)
        name = path.stem
    if not path.exists():
        available = ", ".join(SCENARIO_REGISTRY)
        raise ConfigError(f"scenario '{name_or_path}' not found (shipped: {available})")
    with open(path, "r") as f:
        profile = yaml.safe_load(f) or {}
    return scenario_from_profile(profile, name)
