"""Command-line entry point: `run`, `oracle` and `sweep` verbs over an experiment config."""
import argparse
from typing import List, Optional

from pydantic import ValidationError

from src.config import load_experiment_config
from src.services.experiment_service import ExperimentService
from src.services.oracle_service import OracleService
from src.utils.errors import ConfigurationError, MeshError, SingularOperatorError, SizeCapError
from src.utils.logger import set_log_level, setup_logger

logger = setup_logger('cli')

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INVALID_CONFIG = 3

# Oracle runs pass when every pair of solutions agrees this closely
ORACLE_TOLERANCE = 1e-6


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Low-rank all-at-once solver for stochastic Navier-Stokes flow")
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config")
    common.add_argument("--sigma", type=float, help="Standard deviation of the viscosity")
    common.add_argument("--h", type=float, help="Mesh size")
    common.add_argument("--tau", type=float, help="Time step")
    common.add_argument("--prec", choices=["pcd", "lsc"], help="Schur complement approximation")
    common.add_argument("--tol-gmres", type=float, help="Relative GMRES stopping tolerance")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    subparsers.add_parser("run", parents=[common], help="Solve one configuration and write CSV/TT artifacts")
    subparsers.add_parser("oracle", parents=[common], help="Compare against dense and sequential solves")
    sweep = subparsers.add_parser("sweep", parents=[common], help="Repeat a run over values of one parameter")
    sweep.add_argument("--parameter", required=True, help="sigma, nu0, h, tau or tol_gmres")
    sweep.add_argument("--values", required=True, type=_float_list, help="Comma-separated values")
    return parser


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def overrides_from_args(args: argparse.Namespace) -> dict:
    return {
        "sigma": args.sigma,
        "h": args.h,
        "tau": args.tau,
        "preconditioner": args.prec,
        "tol_gmres": args.tol_gmres,
        "output_dir": args.out,
    }


def run_command(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, overrides_from_args(args))

    if args.command == "run":
        result = ExperimentService.run_experiment(config)
        return EXIT_OK if result.converged else EXIT_NOT_CONVERGED

    if args.command == "oracle":
        report = OracleService.run_oracle(config)
        passed = (
            report.dense_converged
            and report.sequential_converged
            and report.lowrank_converged
            and report.max_discrepancy <= ORACLE_TOLERANCE
        )
        if not passed:
            logger.warning(f"Oracle comparison failed: max discrepancy {report.max_discrepancy:.2e}")
        return EXIT_OK if passed else EXIT_NOT_CONVERGED

    frame = ExperimentService.sweep(config, args.parameter, args.values)
    return EXIT_OK if bool(frame["converged"].fillna(False).all()) else EXIT_NOT_CONVERGED


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    if args.log_level:
        set_log_level(args.log_level)
    try:
        return run_command(args)
    except SingularOperatorError as e:
        logger.error(f"Solver failure: {str(e)}")
        return EXIT_NOT_CONVERGED
    except (ConfigurationError, MeshError, SizeCapError, ValidationError) as e:
        logger.error(f"Invalid configuration: {str(e)}")
        return EXIT_INVALID_CONFIG
