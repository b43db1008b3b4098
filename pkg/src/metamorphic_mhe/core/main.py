"""Main entry point for the metamorphic MHE command line."""

import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from metamorphic_mhe.bench.experiments import compare_fir, noise_boxes, run_scenario, sweep_lambda
from metamorphic_mhe.bench.reports import models_csv, sweep_csv, trajectory_csv, write_output
from metamorphic_mhe.bench.scenarios import build_system
from metamorphic_mhe.config.config import Config, ExperimentConfig, load_json_document
from metamorphic_mhe.core import app
from metamorphic_mhe.errors import ConfigError, DimensionError, MmheError
from metamorphic_mhe.estimation.mhe_init import analysis_table, decay_monotonicity_report, noise_bound
from metamorphic_mhe.estimation.riccati import phi_monotonicity_report
from metamorphic_mhe.estimation.setops import disturbance_box, rpi_box_outer

# Configure logging
logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ESTIMATOR = 3
EXIT_PROPERTY = 4

RICCATI_GRID = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]


def parse_lambdas(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid lambda list: {text}") from e


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment or model document (JSON)")
    common.add_argument("--settings", default="config.yaml", help="settings file (YAML)")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--scenarios", type=int, help="number of Monte Carlo scenarios")
    common.add_argument("--lambda", dest="lambdas", type=parse_lambdas, help="comma-separated lambdas")
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--debug", action="store_true", help="enable debug logging")

    parser = argparse.ArgumentParser(prog="mmhe", description="Metamorphic moving-horizon estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    riccati = sub.add_parser("riccati-report", parents=[common], help="Phi monotonicity in lambda")
    riccati.add_argument("--k-max", type=int, default=50)
    riccati.add_argument("--mode", choices=["theorem", "corollary"], default="theorem")

    sub.add_parser("rpi", parents=[common], help="outer RPI box of the pre-estimator error")
    sub.add_parser("run", parents=[common], help="single scenario trajectory")
    sub.add_parser("sweep", parents=[common], help="ARMSE lambda sweep")
    sub.add_parser("compare-fir", parents=[common], help="MHE against the FIR baseline")
    sub.add_parser("decay-report", parents=[common], help="decay-rate monotonicity in lambda")
    bounds = sub.add_parser("bounds", parents=[common], help="error bound parameters per lambda")
    bounds.add_argument("--x0-norm", type=float, default=0.0)
    bounds.add_argument("--xbar0-norm", type=float, default=0.0)
    sub.add_parser("serve", parents=[common], help="start the MCP analysis server")
    return parser


def load_experiment(args: argparse.Namespace, settings: Config) -> ExperimentConfig:
    """Experiment from settings, a JSON document, and command-line overrides."""
    spec = settings.experiment
    if args.config:
        data = load_json_document(args.config)
        if "A" in data:
            spec = spec.model_copy(update={"model": args.config})
        else:
            spec = ExperimentConfig.model_validate(data)
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.scenarios is not None:
        overrides["scenarios"] = args.scenarios
    if args.lambdas is not None:
        overrides["lambdas"] = args.lambdas
    return ExperimentConfig.model_validate({**spec.model_dump(), **overrides})


def _riccati_report(args: argparse.Namespace, spec: ExperimentConfig) -> int:
    system = build_system(spec)
    n = system.plant.n
    report = phi_monotonicity_report(
        system.plant,
        system.observer,
        system.M,
        system.Q,
        system.R,
        spec.phi0_scale * np.eye(2 * n),
        args.lambdas or RICCATI_GRID,
        args.k_max,
        mode=args.mode,
    )
    write_output(models_csv(report.rows), args.out)
    return EXIT_OK if report.passed else EXIT_PROPERTY


def _rpi(args: argparse.Namespace, spec: ExperimentConfig) -> int:
    system = build_system(spec)
    w_box, v_box = noise_boxes(spec, system.plant)
    Q_box = disturbance_box(system.plant.G, w_box, system.observer.L, v_box)
    box = rpi_box_outer(system.observer.A_L, Q_box)
    write_output(box.model_dump_json(indent=2) + "\n", args.out)
    return EXIT_OK


def _decay_report(args: argparse.Namespace, spec: ExperimentConfig) -> int:
    system = build_system(spec)
    report = decay_monotonicity_report(
        system.plant, system.observer.L, spec.horizon, spec.lambdas, spec.mu, spec.mu_bar
    )
    write_output(models_csv(report.rows), args.out)
    return EXIT_OK if report.passed and report.derivatives_ok else EXIT_PROPERTY


def _bounds(args: argparse.Namespace, spec: ExperimentConfig) -> int:
    system = build_system(spec)
    w_box, v_box = noise_boxes(spec, system.plant)
    lambdas = [lam for lam in spec.lambdas if 0.0 < lam < 1.0]
    if not lambdas:
        raise ConfigError("bounds need at least one lambda in (0, 1)")
    rows = analysis_table(
        system.plant,
        system.observer.L,
        spec.horizon,
        lambdas,
        spec.mu,
        spec.mu_bar,
        noise_bound(w_box),
        noise_bound(v_box),
        args.x0_norm,
        args.xbar0_norm,
    )
    write_output(models_csv(rows), args.out)
    return EXIT_OK


def dispatch(args: argparse.Namespace, settings: Config) -> int:
    if args.command == "serve":
        app.run(settings)
        return EXIT_OK

    spec = load_experiment(args, settings)
    if args.command == "riccati-report":
        return _riccati_report(args, spec)
    if args.command == "rpi":
        return _rpi(args, spec)
    if args.command == "run":
        write_output(trajectory_csv(run_scenario(spec, 0)), args.out)
        return EXIT_OK
    if args.command == "sweep":
        write_output(sweep_csv(sweep_lambda(spec)), args.out)
        return EXIT_OK
    if args.command == "compare-fir":
        write_output(models_csv(compare_fir(spec)), args.out)
        return EXIT_OK
    if args.command == "decay-report":
        return _decay_report(args, spec)
    if args.command == "bounds":
        return _bounds(args, spec)
    raise ConfigError(f"unknown command: {args.command}")


def main(argv: Optional[List[str]] = None):
    """Main entry point."""
    args = build_parser().parse_args(argv)
    try:
        settings = Config.from_file(args.settings)
        level = "DEBUG" if args.debug or (settings.mcp and settings.mcp.debug) else settings.log_level
        logging.getLogger().setLevel(level)
        logger.debug(json.dumps(json.loads(settings.model_dump_json()), indent=4))
        code = dispatch(args, settings)
    except (ConfigError, DimensionError, ValidationError) as e:
        logger.error(f"Invalid configuration: {e}")
        code = EXIT_CONFIG
    except MmheError as e:
        logger.error(f"Estimation failed: {e}")
        code = EXIT_ESTIMATOR
    except Exception as e:
        logger.error(f"Failed to run {args.command}: {e}")
        code = EXIT_ERROR
    sys.exit(code)


if __name__ == "__main__":
    main()
