import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd

from src.config import ExperimentConfig
from src.lowrank.kron_ops import kron_apply
from src.lowrank.tt_core import TensorTrain3, storage_ratio, tt_save
from src.models.reports import CSV_SCHEMA_VERSION, PicardReport, SolutionStatistics
from src.services.problem_service import ProblemService, ProblemSetup
from src.solvers.picard import picard_solve
from src.utils.errors import ConfigurationError
from src.utils.logger import setup_logger
from src.utils.validators import ConfigValidator

logger = setup_logger('experiment_service')

SWEEP_COLUMNS = [
    "schema_version", "parameter", "value", "converged", "picard_steps", "total_gmres_iterations",
    "final_relative_residual", "u_kappa1", "u_kappa2", "p_kappa1", "p_kappa2",
    "storage_ratio_u", "setup_time", "solve_time", "error",
]


@dataclass
class ExperimentResult:
    setup: ProblemSetup
    u: TensorTrain3
    p: TensorTrain3
    report: PicardReport
    statistics: SolutionStatistics
    output_dir: Optional[Path] = None

    @property
    def converged(self) -> bool:
        return self.report.converged


class ExperimentService:
    """Runs experiments and writes their CSV and tensor-train artifacts."""

    @staticmethod
    def compute_statistics(setup: ProblemSetup, u: TensorTrain3, p: TensorTrain3) -> SolutionStatistics:
        """Mean and variance fields at the configured output times (final time by default)."""
        config, problem = setup.config, setup.problem
        times = list(config.output_times) or [config.t_f]
        U = problem.full_field(u)

        u_mean, u_var, p_mean, p_var = [], [], [], []
        for t in times:
            k = min(max(int(round(t / config.tau)) - 1, 0), problem.n_t - 1)
            u_slice = U.time_slice(k)
            p_slice = p.time_slice(k)
            u_mean.append(u_slice[0])
            u_var.append(np.sum(u_slice[1:] ** 2, axis=0))
            p_mean.append(p_slice[0])
            p_var.append(np.sum(p_slice[1:] ** 2, axis=0))

        divergence = (problem.f_p - kron_apply(problem.B_op, u)).norm()
        return SolutionStatistics(
            times=times,
            velocity_nodes=setup.mesh.nodes,
            pressure_nodes=setup.mesh.pnodes,
            u_mean=u_mean,
            u_variance=u_var,
            p_mean=p_mean,
            p_variance=p_var,
            storage_ratio_u=storage_ratio(u.shape, u.ranks),
            storage_ratio_p=storage_ratio(p.shape, p.ranks),
            divergence_residual=divergence,
        )

    @staticmethod
    def summary_frame(result: ExperimentResult) -> pd.DataFrame:
        setup, report, stats = result.setup, result.report, result.statistics
        config = setup.config
        u_ranks, p_ranks = report.final_ranks["u"], report.final_ranks["p"]
        row = {
            "schema_version": CSV_SCHEMA_VERSION,
            "dimensions": setup.dimensions_line(),
            "n_t": setup.problem.n_t,
            "n_xi": setup.problem.n_xi,
            "n_u": setup.spatial.n_u,
            "n_p": setup.spatial.n_p,
            "total_dofs": setup.total_dofs,
            "domain": config.domain,
            "sigma": config.sigma,
            "nu0": config.nu0,
            "h": config.h,
            "tau": config.tau,
            "preconditioner": config.preconditioner,
            "tol_gmres": config.tol_gmres,
            "converged": report.converged,
            "picard_steps": report.picard_steps,
            "total_gmres_iterations": report.total_gmres_iterations,
            "final_relative_residual": report.final_relative_residual,
            "divergence_residual": stats.divergence_residual,
            "u_kappa1": u_ranks[0],
            "u_kappa2": u_ranks[1],
            "p_kappa1": p_ranks[0],
            "p_kappa2": p_ranks[1],
            "storage_ratio_u": stats.storage_ratio_u,
            "storage_ratio_p": stats.storage_ratio_p,
            "min_viscosity": setup.min_viscosity,
            "setup_time": setup.setup_time,
            "solve_time": report.solve_time,
        }
        return pd.DataFrame([row])

    @staticmethod
    def write_artifacts(result: ExperimentResult, output_dir: Path) -> Path:
        """Write report, ranks, stats and summary CSVs plus the u and p tensor trains."""
        output_dir.mkdir(parents=True, exist_ok=True)
        result.report.to_frame().to_csv(output_dir / "report.csv", index=False)
        result.report.ranks_frame().to_csv(output_dir / "ranks.csv", index=False)
        result.statistics.to_frame().to_csv(output_dir / "stats.csv", index=False)
        ExperimentService.summary_frame(result).to_csv(output_dir / "summary.csv", index=False)
        tt_save(result.u, output_dir / "u.tt3")
        tt_save(result.p, output_dir / "p.tt3")
        if not result.converged:
            logger.warning(f"Artifacts in {output_dir} belong to a run that did not converge")
        logger.info(f"Wrote artifacts to {output_dir}")
        return output_dir

    @staticmethod
    def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
        """Assemble, solve and post-process one configuration.

        Args:
            config: Experiment configuration
            write: Write CSV and TT artifacts to config.output_dir

        Returns:
            ExperimentResult; result.converged is False when Picard hit maxit_picard
        """
        setup = ProblemService.build(config)
        u, p, report = picard_solve(setup.problem, config.picard_config())
        statistics = ExperimentService.compute_statistics(setup, u, p)
        logger.info(
            f"Finished in {report.picard_steps} Picard steps and {report.total_gmres_iterations} GMRES "
            f"iterations ({report.solve_time:.2f}s); ranks u={u.ranks} p={p.ranks}, "
            f"storage ratio {statistics.storage_ratio_u:.2%}"
        )
        result = ExperimentResult(setup=setup, u=u, p=p, report=report, statistics=statistics)
        if write:
            result.output_dir = ExperimentService.write_artifacts(result, Path(config.output_dir))
        return result

    @staticmethod
    def sweep(
        template: ExperimentConfig, parameter: str, values: Iterable[float], write: bool = True
    ) -> pd.DataFrame:
        """Run the template once per value of one parameter; failed runs are recorded and skipped.

        Returns:
            One row per run, also written to sweep.csv in the template's output directory
        """
        values = list(values)
        error = ConfigValidator.validate_sweep(parameter, values)
        if error:
            raise ConfigurationError(error)

        root = Path(template.output_dir)
        rows: List[dict] = []
        for value in values:
            row = {"schema_version": CSV_SCHEMA_VERSION, "parameter": parameter, "value": value}
            start = time.perf_counter()
            try:
                config = template.with_overrides(**{parameter: value, "output_dir": str(root / f"{parameter}_{value:g}")})
                result = ExperimentService.run_experiment(config, write=write)
                report = result.report
                u_ranks, p_ranks = report.final_ranks["u"], report.final_ranks["p"]
                row.update(
                    converged=report.converged,
                    picard_steps=report.picard_steps,
                    total_gmres_iterations=report.total_gmres_iterations,
                    final_relative_residual=report.final_relative_residual,
                    u_kappa1=u_ranks[0],
                    u_kappa2=u_ranks[1],
                    p_kappa1=p_ranks[0],
                    p_kappa2=p_ranks[1],
                    storage_ratio_u=result.statistics.storage_ratio_u,
                    setup_time=result.setup.setup_time,
                    solve_time=report.solve_time,
                    error="",
                )
            except Exception as e:
                logger.error(f"Sweep run {parameter}={value} failed: {str(e)}")
                row.update(converged=False, solve_time=time.perf_counter() - start, error=str(e))
            rows.append(row)

        frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
        if write:
            root.mkdir(parents=True, exist_ok=True)
            frame.to_csv(root / "sweep.csv", index=False)
            logger.info(f"Wrote {len(frame)} sweep rows to {root / 'sweep.csv'}")
        return frame
