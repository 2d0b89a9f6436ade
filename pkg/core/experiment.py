"""Monte Carlo experiment runner: simulate, filter, smooth and evaluate.

Every random draw comes from a generator seeded by ``(seed, run, ...)`` so
results do not depend on how many worker threads are used.
"""
import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from .backward_smoother import BackwardSimulator, SmootherSettings, smoother_estimate, trajectory_count
from .config_validator import ExperimentConfigValidator
from .errors import ConfigError, DomainError, SmoothingFailure
from .mb_filter import FilterSettings, MultiBernoulliFilter, filter_estimate, undetected_intensities
from .metrics import gospa, positions, track_switches_per_step
from .models import FilterState, GaussianMixture, Particle, Trajectory, TrajectorySet, ValidationResult
from .scenario import ScenarioConfig, generate_measurements, generate_truth, load_scenario
from .trajectory import states_at

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("k", "method", "gospa_total", "gospa_loc", "gospa_missed", "gospa_false", "switches", "runs")
TRUTH_STREAM = 0
SMOOTHER_STREAM = 1


@dataclass(frozen=True)
class EvaluationSettings:
    gospa_c: float = 40.0
    gospa_p: float = 1.0
    switch_cutoff: float = 40.0


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig
    filter: FilterSettings = field(default_factory=FilterSettings)
    smoother: SmootherSettings = field(default_factory=SmootherSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    birth_mode: str = "model"
    runs: int = 1
    seed: int = 0


def apply_overrides(document: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = {key: dict(value) if isinstance(value, dict) else value for key, value in document.items()}
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            table, name = key.split(".", 1)
            merged.setdefault(table, {})[name] = value
        else:
            merged[key] = value
    return merged


def validate_config(document: Dict[str, Any]) -> ValidationResult:
    return ExperimentConfigValidator().validate(document)


def config_from_document(document: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed TOML document.

    ``overrides`` maps dotted keys (``smoother.particles``) to values and is
    applied before validation; ``None`` values are ignored.
    """
    document = apply_overrides(document, overrides or {})
    result = validate_config(document)
    if not result.is_valid:
        raise ConfigError(result.errors)
    for warning in result.warnings:
        logger.warning(warning)

    scenario = load_scenario(document.get("scenario", {}).get("name", "crossing"))
    filt = document.get("filter", {})
    smoother = document.get("smoother", {})
    evaluation = document.get("evaluation", {})
    return ExperimentConfig(
        scenario=scenario,
        filter=FilterSettings(
            max_hypotheses=filt.get("max_hypotheses", 30),
            prune_threshold=float(filt.get("prune_threshold", 1e-3)),
            reduction=filt.get("reduction", "marginal"),
            gate_probability=float(filt.get("gate_probability", 0.999)),
            split_births=bool(filt.get("split_births", True)),
        ),
        smoother=SmootherSettings(
            particles=smoother.get("particles", 300),
            murty_m=smoother.get("murty_m", 30),
            gate_probability=float(smoother.get("gate_probability", 0.999)),
        ),
        evaluation=EvaluationSettings(
            gospa_c=float(evaluation.get("gospa_c", 40.0)),
            gospa_p=float(evaluation.get("gospa_p", 1.0)),
            switch_cutoff=float(evaluation.get("switch_cutoff", 40.0)),
        ),
        birth_mode=smoother.get("birth_mode", "model"),
        runs=document.get("runs", 1),
        seed=document.get("seed", 0),
    )


@dataclass(frozen=True)
class Simulation:
    truth: TrajectorySet
    scans: List[np.ndarray]


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=stream))


def simulate_run(cfg: ExperimentConfig, run: int = 0) -> Simulation:
    rng = _rng(cfg.seed, run, TRUTH_STREAM)
    scenario = cfg.scenario
    truth = generate_truth(scenario, rng)
    scans = generate_measurements(truth, scenario.sensor, scenario.region, rng, scenario.horizon)
    return Simulation(truth, scans)


def filter_run(cfg: ExperimentConfig, scans: Sequence[np.ndarray]) -> List[FilterState]:
    return MultiBernoulliFilter(cfg.scenario.motion, cfg.scenario.sensor, cfg.filter).run(scans)


def smoother_birth_intensities(cfg: ExperimentConfig) -> Optional[List[GaussianMixture]]:
    if cfg.birth_mode == "model":
        return None
    scenario = cfg.scenario
    return undetected_intensities(scenario.motion, scenario.sensor, scenario.horizon, cfg.filter.prune_threshold)


def smooth_run(cfg: ExperimentConfig, filters: Sequence[FilterState], run: int = 0,
               workers: int = 1) -> List[Particle]:
    simulator = BackwardSimulator(filters, cfg.scenario.motion, cfg.smoother, smoother_birth_intensities(cfg))
    return simulator.simulate(cfg.seed, (run, SMOOTHER_STREAM), workers)


def _gospa_rows(estimates: Sequence[Sequence[np.ndarray]], truth: TrajectorySet, cfg: ExperimentConfig,
                dims: int) -> np.ndarray:
    rows = np.empty((len(estimates), 4))
    for k, estimate in enumerate(estimates, start=1):
        result = gospa(positions(estimate, dims), positions(states_at(truth, k), dims),
                       cfg.evaluation.gospa_c, cfg.evaluation.gospa_p)
        rows[k - 1] = (result.total, result.localization, result.missed, result.false_)
    return rows


def evaluate_filter(cfg: ExperimentConfig, truth: TrajectorySet, filters: Sequence[FilterState]) -> np.ndarray:
    """(K, 5) per-step GOSPA decomposition; the switch column is nan"""
    dims = cfg.scenario.sensor.measurement_dim
    rows = _gospa_rows([filter_estimate(state) for state in filters], truth, cfg, dims)
    return np.hstack([rows, np.full((len(rows), 1), np.nan)])


def evaluate_smoother(cfg: ExperimentConfig, truth: TrajectorySet, estimate: TrajectorySet) -> np.ndarray:
    """(K, 5) per-step GOSPA decomposition plus track switches"""
    horizon = cfg.scenario.horizon
    dims = cfg.scenario.sensor.measurement_dim
    rows = _gospa_rows([states_at(estimate, k) for k in range(1, horizon + 1)], truth, cfg, dims)
    switches = track_switches_per_step(estimate, truth, cfg.evaluation.switch_cutoff, cfg.evaluation.gospa_p,
                                       position_dims=dims, horizon=horizon)
    return np.hstack([rows, switches.reshape(-1, 1).astype(float)])


@dataclass
class RunResult:
    run: int
    filter_metrics: np.ndarray
    smoother_metrics: Optional[np.ndarray] = None
    trajectory_count: Optional[int] = None
    failure: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


def run_single(cfg: ExperimentConfig, run: int = 0, workers: int = 1) -> RunResult:
    """One Monte Carlo run; a smoothing failure is recorded, not raised"""
    return evaluate_simulation(cfg, simulate_run(cfg, run), run, workers)


def evaluate_simulation(cfg: ExperimentConfig, simulation: Simulation, run: int = 0, workers: int = 1) -> RunResult:
    filters = filter_run(cfg, simulation.scans)
    result = RunResult(run=run, filter_metrics=evaluate_filter(cfg, simulation.truth, filters))
    try:
        particles = smooth_run(cfg, filters, run, workers)
    except SmoothingFailure as failure:
        logger.warning("run %d: smoothing failed: %s", run, failure)
        result.failure = str(failure)
        return result
    estimate = smoother_estimate(particles)
    result.smoother_metrics = evaluate_smoother(cfg, simulation.truth, estimate)
    result.trajectory_count = trajectory_count(estimate)
    return result


@dataclass
class ExperimentResult:
    horizon: int
    runs: List[RunResult]

    @property
    def failures(self) -> int:
        return sum(r.failed for r in self.runs)

    @property
    def mean_trajectory_count(self) -> float:
        counts = [r.trajectory_count for r in self.runs if not r.failed]
        return float(np.mean(counts)) if counts else math.nan

    def rows(self) -> List[tuple]:
        """Aggregated rows in CSV column order, filter then smoother at each k"""
        filter_stack = np.stack([r.filter_metrics for r in self.runs])
        smoothed = [r.smoother_metrics for r in self.runs if not r.failed]
        filter_mean = filter_stack.mean(axis=0)
        smoother_mean = np.stack(smoothed).mean(axis=0) if smoothed else np.full((self.horizon, 5), np.nan)
        rows = []
        for k in range(1, self.horizon + 1):
            rows.append((k, "filter", *filter_mean[k - 1], len(self.runs)))
            rows.append((k, "smoother", *smoother_mean[k - 1], len(smoothed)))
        return rows


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """All Monte Carlo runs; runs execute concurrently, results are ordered by run index"""
    indices = range(cfg.runs)
    if cfg.runs == 1 or workers <= 1:
        results = [run_single(cfg, run, workers) for run in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda run: run_single(cfg, run), indices))
    return ExperimentResult(horizon=cfg.scenario.horizon, runs=results)


def _format(value) -> str:
    if isinstance(value, (int, np.integer)) or isinstance(value, str):
        return str(value)
    return f"{float(value):.9g}"


def format_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format(v) for v in row])
    return buffer.getvalue()


def metrics_csv(result: ExperimentResult) -> str:
    return format_csv(CSV_COLUMNS, result.rows())


def filter_estimates_csv(filters: Sequence[FilterState]) -> str:
    dim = next((state.posterior.dim for state in filters if state.posterior.dim), 0)
    rows = []
    for state in filters:
        for index, mean in enumerate(filter_estimate(state)):
            rows.append((state.time, index, *mean))
    return format_csv(("k", "estimate", *(f"x{i + 1}" for i in range(dim))), rows)


def trajectory_set_csv(trajectories: TrajectorySet) -> str:
    dim = trajectories.dim or 0
    rows = []
    for index, trajectory in enumerate(trajectories):
        for offset, state in enumerate(trajectory.states):
            rows.append((index, trajectory.birth_time, trajectory.birth_time + offset, *state))
    return format_csv(("trajectory", "birth_time", "k", *(f"x{i + 1}" for i in range(dim))), rows)


def simulation_to_document(simulation: Simulation, cfg: ExperimentConfig, run: int = 0) -> Dict[str, Any]:
    return {
        "scenario": cfg.scenario.name,
        "seed": cfg.seed,
        "run": run,
        "truth": [{"birth_time": t.birth_time, "states": t.states.tolist()} for t in simulation.truth],
        "measurements": [scan.tolist() for scan in simulation.scans],
    }


def simulation_from_document(document: Dict[str, Any], cfg: ExperimentConfig) -> Simulation:
    dim = cfg.scenario.sensor.measurement_dim
    try:
        truth = TrajectorySet.of(Trajectory(int(t["birth_time"]), t["states"]) for t in document.get("truth", []))
        scans = [np.array(scan, dtype=float).reshape(-1, dim) for scan in document["measurements"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed simulation document: {exc}") from exc
    if len(scans) != cfg.scenario.horizon:
        raise DomainError(f"simulation has {len(scans)} scans, scenario horizon is {cfg.scenario.horizon}")
    return Simulation(truth, scans)


def simulation_yaml(simulation: Simulation, cfg: ExperimentConfig, run: int = 0) -> str:
    return yaml.safe_dump(simulation_to_document(simulation, cfg, run), sort_keys=False)


def load_simulation(path: Path, cfg: ExperimentConfig) -> Simulation:
    with open(path, "r") as f:
        return simulation_from_document(yaml.safe_load(f) or {}, cfg)
