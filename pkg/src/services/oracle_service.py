"""Brute-force verification of the low-rank solver on tiny instances.

Three independent solves of the same discrete problem are compared:

- dense: the all-at-once system assembled as one sparse matrix, Picard with direct solves
- sequential: backward Euler one time step at a time from the spatial matrices and the Dirichlet
  data, Picard with direct solves per step
- low-rank: the tensor-train solver run with tight tolerances
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from src.config import ExperimentConfig, get_settings
from src.discretization.fem import apply_dirichlet
from src.lowrank.kron_ops import build_N_from_tt
from src.lowrank.tt_core import tt_from_full
from src.models.reports import OracleReport
from src.services.problem_service import ProblemService, ProblemSetup
from src.solvers.picard import picard_solve
from src.utils.errors import SizeCapError
from src.utils.logger import setup_logger
from src.utils.validators import ConfigValidator

logger = setup_logger('oracle_service')

# Low-rank run settings; truncation well below the comparison tolerance
TIGHT_TOLERANCES = dict(
    tol_picard=1e-10, tol_gmres=1e-10, eps_gmres=1e-12, eps_soln=1e-12, eps_conv=1e-12,
    maxit_picard=60, maxit_gmres=200,
)
DIRECT_TOL = 1e-11
DIRECT_MAXIT = 100


@dataclass
class OracleSolution:
    u: np.ndarray  # (n_t, n_xi, n_u)
    p: np.ndarray  # (n_t, n_xi, n_p)
    converged: bool
    steps: int

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.p.ravel()])


def relative_discrepancy(a: OracleSolution, b: OracleSolution) -> float:
    reference = np.linalg.norm(b.stacked())
    difference = np.linalg.norm(a.stacked() - b.stacked())
    return float(difference / reference) if reference > 0 else float(difference)


class OracleService:
    @staticmethod
    def _full_field(setup: ProblemSetup, u: np.ndarray, lifting: np.ndarray) -> np.ndarray:
        full = lifting.copy()
        full[..., setup.spatial.free_dofs] += u
        return full

    @staticmethod
    def _convection(setup: ProblemSetup, U: np.ndarray, columns: str) -> sp.csr_matrix:
        """Assembled stochastic Galerkin convection of a dense full field of shape (n_t, n_xi, 2n)."""
        field = tt_from_full(U, 0.0)
        return build_N_from_tt(field, setup.gpc, setup.spatial, columns=columns).to_sparse()

    @staticmethod
    def solve_dense(setup: ProblemSetup, tol: float = DIRECT_TOL, maxit: int = DIRECT_MAXIT) -> OracleSolution:
        """All-at-once Picard iteration with the explicitly assembled sparse system."""
        problem, spatial = setup.problem, setup.spatial
        n_t, n_xi = problem.n_t, problem.n_xi
        n_u_all = n_t * n_xi * spatial.n_u

        FC = (problem.F_lin + problem.C).to_sparse()
        B = problem.B_op.to_sparse()
        f_u = problem.f_u.full().ravel()
        f_p = problem.f_p.full().ravel()
        lifting = problem.lifting.full()
        f_norm = np.linalg.norm(np.concatenate([f_u, f_p]))

        u = np.zeros(n_u_all)
        p = np.zeros(B.shape[0])
        converged, step = False, 0
        for step in range(maxit + 1):
            U = OracleService._full_field(setup, u.reshape(problem.velocity_shape), lifting)
            N_all = OracleService._convection(setup, U, "all")
            r_u = f_u - FC @ u - B.T @ p - N_all @ U.ravel()
            r_p = f_p - B @ u
            residual = np.linalg.norm(np.concatenate([r_u, r_p]))
            logger.debug(f"Dense Picard step {step}: relative residual {residual / f_norm:.3e}")
            if residual <= tol * f_norm:
                converged = True
                break
            if step == maxit:
                break
            # Picard update: convection frozen at U, boundary part moved to the right-hand side
            N_free = OracleService._convection(setup, U, "free")
            boundary = N_all @ lifting.ravel()
            K = sp.bmat([[FC + N_free, B.T], [B, None]], format="csc")
            x = spsolve(K, np.concatenate([f_u - boundary, f_p]))
            u, p = x[:n_u_all], x[n_u_all:]

        return OracleSolution(
            u=u.reshape(problem.velocity_shape), p=p.reshape(problem.pressure_shape), converged=converged, steps=step
        )

    @staticmethod
    def step_operators(setup: ProblemSetup) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
        """Linear velocity block and divergence of one backward Euler step, assembled from the spatial matrices."""
        spatial, gpc = setup.spatial, setup.gpc
        eye_xi = sp.identity(gpc.n_xi, format="csr")
        F_step = sp.kron(eye_xi, spatial.M, format="csr") / setup.problem.tau
        for G_l, A_l in zip(gpc.G, spatial.A):
            F_step = F_step + sp.kron(G_l, A_l, format="csr")
        return F_step.tocsr(), sp.kron(eye_xi, spatial.B, format="csr")

    @staticmethod
    def step_convection(setup: ProblemSetup, U: np.ndarray, columns: str) -> sp.csr_matrix:
        """sum_j H_j (x) N(U[j]) for a full field of shape (n_xi, 2n) at one time."""
        spatial = setup.spatial
        terms = [
            sp.kron(H_j, spatial.convection(U[j], columns=columns), format="csr") for j, H_j in enumerate(setup.gpc.H)
        ]
        return sum(terms[1:], terms[0]).tocsr()

    @staticmethod
    def step_rhs(setup: ProblemSetup, k: int, u_prev: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Right-hand sides of time step k + 1 built from the Dirichlet data at t_k and t_{k+1}.

        Returns:
            (rhs_u, rhs_p, full-field lifting of shape (n_xi, 2n))
        """
        spatial, gpc = setup.spatial, setup.gpc
        tau, n_xi = setup.problem.tau, gpc.n_xi
        previous = apply_dirichlet(spatial, setup.inflow, k * tau)
        current = apply_dirichlet(spatial, setup.inflow, (k + 1) * tau)

        rhs_u = np.zeros(n_xi * spatial.n_u)
        rhs_u[: spatial.n_u] += (current.mass_rhs - previous.mass_rhs) / tau
        for G_l, stiffness in zip(gpc.G, current.stiffness_rhs):
            rhs_u += np.kron(G_l.tocsc()[:, 0].toarray().ravel(), stiffness)
        rhs_u += sp.kron(sp.identity(n_xi), spatial.M, format="csr") @ u_prev / tau

        rhs_p = np.zeros(n_xi * spatial.n_p)
        rhs_p[: spatial.n_p] = current.divergence_rhs
        lift = np.zeros((n_xi, 2 * spatial.n_nodes))
        lift[0] = current.g_full
        return rhs_u, rhs_p, lift

    @staticmethod
    def solve_sequential(setup: ProblemSetup, tol: float = DIRECT_TOL, maxit: int = DIRECT_MAXIT) -> OracleSolution:
        """Backward Euler time stepping with a stochastic Galerkin Picard solve at every step.

        Operators and right-hand sides are assembled per step from the spatial matrices and the
        Dirichlet data, without the all-at-once tensor-train builders.
        """
        problem, spatial = setup.problem, setup.spatial
        n_t, n_xi = problem.n_t, problem.n_xi
        F_step, B = OracleService.step_operators(setup)

        u = np.zeros(problem.velocity_shape)
        p = np.zeros(problem.pressure_shape)
        converged = True
        u_prev = np.zeros(n_xi * spatial.n_u)
        for k in range(n_t):
            rhs_u, rhs_p, lift = OracleService.step_rhs(setup, k, u_prev)
            rhs_norm = np.linalg.norm(np.concatenate([rhs_u, rhs_p]))
            u_k, p_k = u_prev.copy(), np.zeros(n_xi * spatial.n_p)
            step_converged = False
            for _ in range(maxit + 1):
                U = lift.copy()
                U[:, spatial.free_dofs] += u_k.reshape(n_xi, spatial.n_u)
                N_all = OracleService.step_convection(setup, U, "all")
                r_u = rhs_u - F_step @ u_k - B.T @ p_k - N_all @ U.ravel()
                r_p = rhs_p - B @ u_k
                if np.linalg.norm(np.concatenate([r_u, r_p])) <= tol * rhs_norm:
                    step_converged = True
                    break
                N_free = OracleService.step_convection(setup, U, "free")
                K = sp.bmat([[F_step + N_free, B.T], [B, None]], format="csc")
                x = spsolve(K, np.concatenate([rhs_u - N_all @ lift.ravel(), rhs_p]))
                u_k, p_k = x[: len(u_k)], x[len(u_k) :]
            if not step_converged:
                logger.warning(f"Sequential Picard did not converge at time step {k + 1}")
            converged = converged and step_converged
            u[k] = u_k.reshape(n_xi, spatial.n_u)
            p[k] = p_k.reshape(n_xi, spatial.n_p)
            u_prev = u_k

        return OracleSolution(u=u, p=p, converged=converged, steps=n_t)

    @staticmethod
    def solve_lowrank(setup: ProblemSetup) -> Tuple[OracleSolution, Tuple[int, int]]:
        config = setup.config.with_overrides(**TIGHT_TOLERANCES).picard_config()
        u, p, report = picard_solve(setup.problem, config)
        solution = OracleSolution(u=u.full(), p=p.full(), converged=report.converged, steps=report.picard_steps)
        return solution, u.ranks

    @staticmethod
    def run_oracle(config: ExperimentConfig, write: bool = True) -> OracleReport:
        """Solve one tiny instance three ways and report pairwise relative discrepancies.

        Raises:
            SizeCapError: if the all-at-once system exceeds Settings.ORACLE_DOF_CAP
        """
        setup = ProblemService.build(config)
        error = ConfigValidator.validate_dense_size(setup.total_dofs, get_settings().ORACLE_DOF_CAP)
        if error:
            raise SizeCapError(error)

        dense = OracleService.solve_dense(setup)
        sequential = OracleService.solve_sequential(setup)
        lowrank, ranks = OracleService.solve_lowrank(setup)

        report = OracleReport(
            total_dofs=setup.total_dofs,
            dense_vs_sequential=relative_discrepancy(dense, sequential),
            lowrank_vs_dense=relative_discrepancy(lowrank, dense),
            lowrank_vs_sequential=relative_discrepancy(lowrank, sequential),
            dense_picard_steps=dense.steps,
            dense_converged=dense.converged,
            sequential_converged=sequential.converged,
            lowrank_converged=lowrank.converged,
            lowrank_ranks=ranks,
        )
        logger.info(
            f"Oracle discrepancies: dense/sequential {report.dense_vs_sequential:.2e}, "
            f"low-rank/dense {report.lowrank_vs_dense:.2e}, low-rank/sequential {report.lowrank_vs_sequential:.2e}"
        )
        if write:
            out = Path(config.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            report.to_frame().to_csv(out / "oracle.csv", index=False)
        return report
