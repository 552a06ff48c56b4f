"""Full-size backward-facing step runs; enabled with STOCHNS_RUN_BENCHMARK=1."""
import pytest

from src.config import ExperimentConfig
from src.services.experiment_service import ExperimentService
from src.services.problem_service import ProblemService


@pytest.fixture(scope="module")
def benchmark_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("benchmark")
    return {
        prec: ExperimentService.run_experiment(
            ExperimentConfig(preconditioner=prec, output_dir=str(out / prec)), write=False
        )
        for prec in ("lsc", "pcd")
    }


def test_benchmark_dimensions():
    setup = ProblemService.build(ExperimentConfig())
    assert setup.dimensions_line() == "n_t=64, n_ξ=20, n_u=2992, n_p=461, total=4419840"
    assert setup.min_viscosity > 0.0


@pytest.mark.benchmark
def test_picard_steps_and_gmres_iterations(benchmark_runs):
    report = benchmark_runs["lsc"].report
    assert report.converged
    assert 4 <= report.picard_steps <= 6
    assert report.total_gmres_iterations <= 30


@pytest.mark.benchmark
def test_coarse_fallback_converges(tmp_path):
    config = ExperimentConfig(h=0.5, tau=2.0 ** -5, output_dir=str(tmp_path))
    report = ExperimentService.run_experiment(config, write=False).report
    assert report.converged
    assert report.picard_steps <= 6


@pytest.mark.benchmark
def test_lsc_needs_no_more_iterations_than_pcd(benchmark_runs):
    lsc = benchmark_runs["lsc"].report
    pcd = benchmark_runs["pcd"].report
    assert pcd.converged
    assert lsc.total_gmres_iterations <= pcd.total_gmres_iterations


@pytest.mark.benchmark
def test_solution_is_compressed(benchmark_runs):
    stats = benchmark_runs["lsc"].statistics
    assert stats.storage_ratio_u < 0.1


@pytest.mark.benchmark
def test_tighter_gmres_tolerance_costs_iterations(tmp_path):
    frame = ExperimentService.sweep(
        ExperimentConfig(output_dir=str(tmp_path)), "tol_gmres", [1e-1, 1e-3, 1e-5], write=False
    )
    assert frame["converged"].all()
    assert frame["picard_steps"].nunique() == 1
    iterations = frame["total_gmres_iterations"].tolist()
    assert iterations[0] < iterations[1] < iterations[2]
    solve_times = frame["solve_time"].tolist()
    assert solve_times[0] < solve_times[1] < solve_times[2]


@pytest.mark.benchmark
def test_ranks_grow_with_sigma(tmp_path):
    frame = ExperimentService.sweep(
        ExperimentConfig(output_dir=str(tmp_path)), "sigma", [0.001, 0.005, 0.01], write=False
    )
    assert frame["converged"].all()
    kappa2 = frame["u_kappa2"].tolist()
    assert kappa2 == sorted(kappa2)
