"""Export the assembled matrices of a configuration as MatrixMarket files for inspection."""
import argparse
from pathlib import Path

import pandas as pd
import scipy.sparse as sp
from scipy.io import mmwrite

from src.config import get_settings, load_experiment_config
from src.services.problem_service import ProblemService
from src.discretization.mesh import mesh_to_text
from src.utils.logger import setup_logger

logger = setup_logger('export_matrices')


def export_matrices(config_path: str, out: str, include_kron: bool = False) -> Path:
    """Write gPC, KL, spatial and (optionally) assembled all-at-once matrices to out.

    Args:
        config_path: TOML experiment config
        out: Target directory
        include_kron: Also write the sparsity pattern of the assembled all-at-once operators;
            refused above Settings.ORACLE_DOF_CAP unknowns

    Returns:
        Path of the target directory
    """
    setup = ProblemService.build(load_experiment_config(config_path))
    target = Path(out)
    target.mkdir(parents=True, exist_ok=True)

    for l, G_l in enumerate(setup.gpc.G):
        mmwrite(target / f"G_{l}.mtx", G_l)
    for l, H_l in enumerate(setup.gpc.H):
        mmwrite(target / f"H_{l + 1}.mtx", H_l)

    pd.DataFrame({"eigenvalue": setup.kl.eigenvalues}).to_csv(target / "kl_eigenvalues.csv", index=False)
    if setup.kl.m:
        mmwrite(target / "kl_eigenvectors.mtx", setup.kl.eigenvectors)

    spatial = setup.spatial
    mmwrite(target / "M.mtx", spatial.M)
    for l, A_l in enumerate(spatial.A):
        mmwrite(target / f"A_{l}.mtx", A_l)
    mmwrite(target / "B.mtx", spatial.B)
    mmwrite(target / "M_p.mtx", spatial.M_p)
    mmwrite(target / "A_p.mtx", spatial.A_p)
    (target / "mesh.txt").write_text(mesh_to_text(setup.mesh) + "\n")

    if include_kron:
        if setup.total_dofs > get_settings().ORACLE_DOF_CAP:
            logger.warning(f"Skipping all-at-once operators: {setup.total_dofs} unknowns")
        else:
            problem = setup.problem
            for name, op in (("F_plus_C", problem.F_lin + problem.C), ("B_all", problem.B_op)):
                pattern = op.to_sparse()
                pattern.data[:] = 1.0
                mmwrite(target / f"{name}_pattern.mtx", sp.csr_matrix(pattern))

    logger.info(f"Exported matrices for {setup.dimensions_line()} to {target}")
    return target


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Export assembled matrices as MatrixMarket files")
    parser.add_argument("--config", required=True, help="TOML experiment config")
    parser.add_argument("--out", default="results/matrices", help="Output directory")
    parser.add_argument("--kron", action="store_true", help="Also export all-at-once sparsity patterns")
    args = parser.parse_args()
    export_matrices(args.config, args.out, args.kron)
