"""Inexact all-at-once Picard iteration with low-rank GMRES corrections."""
import time
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

from src.config import PicardConfig
from src.discretization.fem import SpatialDiscretization
from src.discretization.stochastic_basis import TripleProductMatrices
from src.lowrank.block_tt import BlockTT
from src.lowrank.kron_ops import (
    KronSumOperator,
    apply_spatial,
    build_B,
    build_C,
    build_F,
    build_N_from_tt,
    kron_apply,
    kron_apply_accumulate,
)
from src.lowrank.tt_core import TensorTrain3, tt_zeros
from src.models.reports import PicardReport, PicardStep
from src.solvers.gmres import GmresResult, lr_gmres
from src.solvers.preconditioners import build_preconditioner
from src.utils.logger import setup_logger


@dataclass(frozen=True)
class SaddleSystem:
    """[F + C, B^T; B, 0] acting on stacked (velocity, pressure) tensor trains."""

    F_plus_C: KronSumOperator
    B_op: KronSumOperator
    Bt_op: KronSumOperator
    rhs_u: TensorTrain3
    rhs_p: TensorTrain3

    @property
    def rhs(self) -> BlockTT:
        return BlockTT(self.rhs_u, self.rhs_p)

    def apply(self, x: BlockTT) -> BlockTT:
        return BlockTT(
            kron_apply(self.F_plus_C, x.u) + kron_apply(self.Bt_op, x.p),
            kron_apply(self.B_op, x.u),
        )

    __call__ = apply


@dataclass
class AllAtOnceProblem:
    """Discretized stochastic Navier-Stokes problem over all time steps.

    Velocity unknowns are the free dofs; the full convecting field is E u + g where E embeds
    free dofs into all velocity nodes and g is the Dirichlet lifting.
    """

    spatial: SpatialDiscretization
    gpc: TripleProductMatrices
    tau: float
    n_t: int
    lifting: TensorTrain3  # (n_t, n_xi, 2 * n_nodes)
    f_u: TensorTrain3
    f_p: TensorTrain3

    @property
    def n_xi(self) -> int:
        return self.gpc.n_xi

    @property
    def velocity_shape(self) -> Tuple[int, int, int]:
        return self.n_t, self.n_xi, self.spatial.n_u

    @property
    def pressure_shape(self) -> Tuple[int, int, int]:
        return self.n_t, self.n_xi, self.spatial.n_p

    @property
    def rhs(self) -> BlockTT:
        return BlockTT(self.f_u, self.f_p)

    @cached_property
    def F_lin(self) -> KronSumOperator:
        """Mass and stochastic diffusion part of F; shares the mass factor with C."""
        return build_F(self.spatial, self.gpc, self.tau, self.n_t)

    @cached_property
    def C(self) -> KronSumOperator:
        return build_C(self.tau, self.spatial.M, self.n_t, self.n_xi)

    @cached_property
    def B_op(self) -> KronSumOperator:
        return build_B(self.n_t, self.n_xi, self.spatial.B)

    @cached_property
    def Bt_op(self) -> KronSumOperator:
        return self.B_op.transpose()

    def full_field(self, u: TensorTrain3) -> TensorTrain3:
        return apply_spatial(u, self.spatial.embed) + self.lifting

    def saddle_system(self, u_tilde: Optional[TensorTrain3], rhs: Optional[BlockTT] = None) -> SaddleSystem:
        """Linearized system with convection frozen at u_tilde (Stokes if None)."""
        op = self.F_lin + self.C
        if u_tilde is not None:
            op = op + build_N_from_tt(u_tilde, self.gpc, self.spatial, columns="free")
        rhs = rhs if rhs is not None else self.rhs
        return SaddleSystem(op, self.B_op, self.Bt_op, rhs.u, rhs.p)

    def residual(self, u: TensorTrain3, p: TensorTrain3, U: TensorTrain3, eps: float) -> BlockTT:
        """Nonlinear residual f - L(U)[u; p] with convection of the full field U."""
        convection = build_N_from_tt(U, self.gpc, self.spatial, columns="all")
        r_u = (
            self.f_u
            - kron_apply(self.F_lin + self.C, u)
            - kron_apply(self.Bt_op, p)
            - kron_apply_accumulate(convection, U, 1e-2 * eps)
        )
        r_p = self.f_p - kron_apply(self.B_op, u)
        return BlockTT(r_u, r_p).round(eps)


class PicardSolver:
    def __init__(self, problem: AllAtOnceProblem, config: PicardConfig):
        self.problem = problem
        self.config = config
        self.logger = setup_logger('picard')

    def _linear_solve(self, u_tilde: Optional[TensorTrain3], rhs: BlockTT, label: str) -> GmresResult:
        problem, config = self.problem, self.config
        system = problem.saddle_system(u_tilde, rhs)
        preconditioner = build_preconditioner(
            problem.spatial, problem.tau, problem.n_t, problem.n_xi, problem.Bt_op, u_tilde, config
        )
        result = lr_gmres(
            system, rhs, preconditioner,
            tol=config.tol_gmres, eps=config.eps_gmres, maxit=config.maxit_gmres, name=label,
        )
        if preconditioner.block_solve.failures:
            self.logger.warning(f"{label}: {preconditioner.block_solve.failures} inner solves hit maxit_inner")
        return result

    def solve(self) -> Tuple[TensorTrain3, TensorTrain3, PicardReport]:
        """Run the inexact Picard iteration.

        Returns:
            (u, p, report) with u on free velocity dofs; report.converged is False when
            maxit_picard is reached first
        """
        problem, config = self.problem, self.config
        f = problem.rhs
        f_norm = f.norm()
        steps = []
        start = time.perf_counter()

        if f_norm == 0.0:
            self.logger.info("Right-hand side is zero; the zero solution is exact")
            report = PicardReport(steps=[], converged=True, rhs_norm=0.0, solve_time=0.0)
            return tt_zeros(problem.velocity_shape), tt_zeros(problem.pressure_shape), report

        # Stokes problem for the initial iterate
        result = self._linear_solve(None, f, "stokes gmres")
        u = result.solution.u.round(config.eps_soln)
        p = result.solution.p.round(config.eps_soln)
        delta = result.solution

        converged = False
        for step in range(config.maxit_picard + 1):
            U = problem.full_field(u)
            u_tilde = U.round(config.eps_conv)
            r = problem.residual(u, p, U, config.eps_gmres)
            r_norm = r.norm()
            steps.append(
                PicardStep(
                    step=step,
                    residual=r_norm,
                    relative_residual=r_norm / f_norm,
                    divergence_residual=r.p.norm(),
                    gmres_iterations=result.iterations,
                    gmres_converged=result.converged,
                    gmres_history=result.history,
                    update_time=result.update_time,
                    du_ranks=delta.u.ranks,
                    dp_ranks=delta.p.ranks,
                    u_ranks=u.ranks,
                    p_ranks=p.ranks,
                    u_tilde_ranks=u_tilde.ranks,
                    elapsed=time.perf_counter() - start,
                )
            )
            self.logger.info(
                f"Picard step {step}: residual {r_norm / f_norm:.3e}, GMRES iterations {result.iterations}, "
                f"ranks u={u.ranks} p={p.ranks} u_tilde={u_tilde.ranks}"
            )
            if r_norm <= config.tol_picard * f_norm:
                converged = True
                break
            if step == config.maxit_picard:
                break

            result = self._linear_solve(u_tilde, r, f"picard {step + 1} gmres")
            delta = result.solution
            u = (u + delta.u).round(config.eps_soln)
            p = (p + delta.p).round(config.eps_soln)

        if not converged:
            self.logger.warning(f"Picard iteration stopped after {config.maxit_picard} steps without convergence")
        report = PicardReport(
            steps=steps, converged=converged, rhs_norm=f_norm, solve_time=time.perf_counter() - start
        )
        return u, p, report


def picard_solve(problem: AllAtOnceProblem, config: PicardConfig) -> Tuple[TensorTrain3, TensorTrain3, PicardReport]:
    return PicardSolver(problem, config).solve()
