import argparse
import logging
import os
import re
import sys
from pathlib import Path
from typing import Dict, Optional

from dotenv import load_dotenv

from core.discrete_oracle import load_oracle_instances, run_oracle_checks
from core.errors import ConfigError, SmootherError
from core.backward_smoother import smoother_estimate, trajectory_count
from core.experiment import (ExperimentConfig, ExperimentResult, Simulation, apply_overrides, config_from_document,
                             evaluate_simulation, filter_estimates_csv, filter_run, load_simulation, metrics_csv,
                             run_experiment, simulate_run, simulation_yaml, smooth_run, trajectory_set_csv,
                             validate_config)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
DEFAULT_CONFIG = Path("config.toml")


def setup_environment() -> int:
    """Load .env settings; returns the worker thread count"""
    load_dotenv()

    level = os.getenv("SMOOTHER_LOG_LEVEL", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        print(f"❌ Error: SMOOTHER_LOG_LEVEL '{level}' is not a logging level.")
        sys.exit(EXIT_CONFIG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    workers = os.getenv("SMOOTHER_WORKERS", "1")
    if not workers.isdigit() or int(workers) < 1:
        print(f"❌ Error: SMOOTHER_WORKERS must be a positive integer, got '{workers}'.")
        sys.exit(EXIT_CONFIG)
    return int(workers)


try:
    import tomllib as toml
except ImportError:
    import tomli as toml


def load_config(path: Optional[str] = None) -> Dict:
    """Load the experiment configuration; the default file may be absent"""
    config_path = Path(path) if path else DEFAULT_CONFIG
    if not config_path.exists():
        if path:
            raise ConfigError(f"config file '{path}' not found")
        return {}

    with open(config_path, "rb") as f:
        try:
            return toml.load(f)
        except toml.TOMLDecodeError as e:
            raise ConfigError(f"{config_path}: {e}") from e


ARTIFACT_NAME_PATTERN = re.compile(r'^[a-z0-9_.]+$')


def save_artifact(name: str, content: str, out: Optional[str] = None) -> Path:
    """Write an output to --out, or to artifacts/<name> by default"""
    if out:
        file_path = Path(out)
        file_path.parent.mkdir(parents=True, exist_ok=True)
    else:
        if not ARTIFACT_NAME_PATTERN.match(name):
            raise ValueError(f"invalid artifact name: {name}")
        output_dir = Path("artifacts")
        output_dir.mkdir(exist_ok=True)
        file_path = output_dir / name

    with open(file_path, 'w') as f:
        f.write(content)

    print(f"   📄 Saved to {file_path}")
    return file_path


def print_validation_report(validation):
    """Print validation results prettily"""
    if not validation.is_valid:
        print(f"   ⚠️  Validation Issues:")
        for error in validation.errors:
            print(f"      - 🔴 {error}")

    if validation.warnings:
        for warning in validation.warnings:
            print(f"      - 🔸 {warning}")

    if validation.suggestions:
        for suggestion in validation.suggestions:
            print(f"      - 💡 {suggestion}")


class CommandLineParser(argparse.ArgumentParser):
    """Usage errors are configuration errors, so they exit with EXIT_CONFIG"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = CommandLineParser(description="Multi-Bernoulli filtering and trajectory-set backward smoothing")
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"Experiment config TOML (default: {DEFAULT_CONFIG})")
    common.add_argument("--seed", type=int, help="Root seed (overrides the config)")
    common.add_argument("--runs", type=int, help="Monte Carlo runs (overrides the config)")
    common.add_argument("--out", help="Output path (default: artifacts/<command output>)")
    common.add_argument("--particles", type=int, help="Backward-simulation particles T")
    common.add_argument("--hypotheses", type=int, help="Global hypotheses kept per backward step (Murty M)")

    subparsers.add_parser("simulate", parents=[common], help="Generate truth and measurements as YAML")
    for name, text in (("filter", "Run the MB filter and write per-step estimates"),
                       ("smooth", "Filter, backward-smooth and write the trajectory estimate"),
                       ("evaluate", "Filter, smooth and write single-run metrics")):
        sub = subparsers.add_parser(name, parents=[common], help=text)
        sub.add_argument("--input", help="Simulation YAML from `simulate` (default: simulate run 0)")
    subparsers.add_parser("run", parents=[common], help="Monte Carlo experiment, aggregated metrics CSV")
    oracle = subparsers.add_parser("oracle-check", help="Check the smoothing identities by exact enumeration")
    oracle.add_argument("--instances", help="Oracle instances YAML (default: shipped instances)")
    return parser


def load_experiment(args) -> ExperimentConfig:
    document = apply_overrides(load_config(args.config), {
        "seed": args.seed, "runs": args.runs,
        "smoother.particles": args.particles, "smoother.murty_m": args.hypotheses,
    })
    validation = validate_config(document)
    if not validation.is_valid:
        raise ConfigError(validation.errors)
    if validation.warnings or validation.suggestions:
        print_validation_report(validation)
    return config_from_document(document)


def _simulation(cfg: ExperimentConfig, args) -> Simulation:
    if getattr(args, "input", None):
        print(f"📥 Loading simulation from '{args.input}'")
        return load_simulation(Path(args.input), cfg)
    return simulate_run(cfg, 0)


def cmd_simulate(cfg: ExperimentConfig, args, workers: int) -> int:
    simulation = simulate_run(cfg, 0)
    print(f"   ✅ {len(simulation.truth)} targets, "
          f"{sum(len(scan) for scan in simulation.scans)} measurements over {len(simulation.scans)} scans")
    save_artifact("simulation.yaml", simulation_yaml(simulation, cfg), args.out)
    return EXIT_OK


def cmd_filter(cfg: ExperimentConfig, args, workers: int) -> int:
    filters = filter_run(cfg, _simulation(cfg, args).scans)
    save_artifact("filter_estimates.csv", filter_estimates_csv(filters), args.out)
    return EXIT_OK


def cmd_smooth(cfg: ExperimentConfig, args, workers: int) -> int:
    filters = filter_run(cfg, _simulation(cfg, args).scans)
    print(f"🔙 Backward simulation with {cfg.smoother.particles} particles, M={cfg.smoother.murty_m}...")
    estimate = smoother_estimate(smooth_run(cfg, filters, 0, workers))
    print(f"   ✅ Estimated {trajectory_count(estimate)} trajectories")
    save_artifact("smoother_estimate.csv", trajectory_set_csv(estimate), args.out)
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, args, workers: int) -> int:
    result = evaluate_simulation(cfg, _simulation(cfg, args), 0, workers)
    if result.failed:
        print(f"   ⚠️  Smoothing failed: {result.failure}")
    save_artifact("metrics_run.csv", metrics_csv(ExperimentResult(cfg.scenario.horizon, [result])), args.out)
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, args, workers: int) -> int:
    print(f"🎲 {cfg.runs} Monte Carlo runs on '{cfg.scenario.name}' (seed {cfg.seed}, {workers} workers)...")
    result = run_experiment(cfg, workers)
    save_artifact("metrics.csv", metrics_csv(result), args.out)
    print(f"   📊 Mean estimated trajectory count: {result.mean_trajectory_count:.2f}")
    if result.failures:
        print(f"   ⚠️  Smoothing failures: {result.failures}/{cfg.runs}")
    else:
        print(f"   ✅ Smoothing failures: 0/{cfg.runs}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    instances = load_oracle_instances(args.instances)
    print(f"🧮 Checking {len(instances)} discrete instances by exact enumeration...")
    failed = 0
    for instance in instances:
        report = run_oracle_checks(instance)
        status = "✅" if report.passed else "❌"
        print(f"   {status} {report.name}: {report.set_count} sets | truncation {report.truncation_mass:.1e} | "
              f"forward-backward {report.forward_backward:.1e} | ratio {report.window_ratio:.1e} | "
              f"multi-step {report.multi_step:.1e} | one-step {report.predicted:.1e} | births {report.birth_mass:.1e}")
        for failure in report.failures:
            print(f"      - 🔴 {failure}")
        failed += not report.passed
    if failed:
        print(f"\n❌ {failed} instance(s) failed.")
        return EXIT_RUNTIME
    print("\n✨ All identities hold.")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "smooth": cmd_smooth,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
}


def main(argv=None) -> int:
    workers = setup_environment()
    args = build_parser().parse_args(argv)

    print(f"\n🚀 Trajectory smoother: {args.command}")
    print("==========================================")
    try:
        if args.command == "oracle-check":
            return cmd_oracle_check(args)
        cfg = load_experiment(args)
        return COMMANDS[args.command](cfg, args, workers)
    except ConfigError as e:
        print(f"❌ Config error:")
        for error in e.errors:
            print(f"      - 🔴 {error}")
        return EXIT_CONFIG
    except (SmootherError, OSError) as e:
        print(f"❌ Failed: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
