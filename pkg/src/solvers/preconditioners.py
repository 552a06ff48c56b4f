"""Mean-based block triangular preconditioners for the all-at-once saddle point system.

Applying the preconditioner to (v_u, v_p) computes

    p = -S^-1 v_p,    u = (F_0 + C)^-1 (v_u - B^T p)

where S^-1 is a PCD or LSC Schur complement approximation and the (1,1) solve is an
inner low-rank GMRES on the mean operator.
"""
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from src.config import PicardConfig, get_settings
from src.lowrank.block_tt import BlockTT
from src.lowrank.kron_ops import (
    KronSumOperator,
    apply_spatial,
    apply_time,
    build_F0C,
    build_Fp0Cp,
    kron_apply,
    kron_apply_rounded,
    kron_sandwich,
    mean_convection_factors,
)
from src.lowrank.tt_core import TensorTrain3, tt_from_full
from src.solvers.gmres import lr_gmres
from src.utils.errors import SingularOperatorError, SizeCapError
from src.utils.logger import setup_logger

logger = setup_logger('preconditioners')


def factorize(matrix: sp.spmatrix, label: str):
    """Sparse LU of a square matrix; raises SingularOperatorError when it fails."""
    try:
        return splu(sp.csc_matrix(matrix))
    except RuntimeError as exc:
        raise SingularOperatorError(f"Factorization of the {label} failed: {exc}") from exc


class PressurePoisson:
    """(B M*^-1 B^T)^-1 applied on the spatial core with one sparse factorization."""

    def __init__(self, B: sp.spmatrix, diag_M: np.ndarray):
        self.matrix = (B @ sp.diags(1.0 / diag_M) @ B.T).tocsc()
        self.lu = factorize(self.matrix, "pressure Poisson operator")

    def solve(self, z: TensorTrain3) -> TensorTrain3:
        return apply_spatial(z, self.lu.solve)


class PCDSchur:
    """S^-1 v = (B M*^-1 B^T)^-1 (F_p0 + C_p) M_p*^-1 v."""

    def __init__(self, Fp0Cp: KronSumOperator, poisson: PressurePoisson, diag_Mp: np.ndarray, eps: float):
        self.Fp0Cp = Fp0Cp
        self.poisson = poisson
        self.inv_diag_Mp = 1.0 / diag_Mp
        self.eps = eps

    def __call__(self, v_p: TensorTrain3) -> TensorTrain3:
        w = apply_spatial(v_p, lambda X: self.inv_diag_Mp[:, None] * X)
        w = kron_apply_rounded(self.Fp0Cp, w, self.eps)
        return self.poisson.solve(w)


class LSCSchur:
    """S^-1 v = P^-1 (B M*^-1 (F_0 + C) M*^-1 B^T) P^-1 v with P = B M*^-1 B^T."""

    def __init__(self, F0C: KronSumOperator, poisson: PressurePoisson, B: sp.spmatrix, diag_M: np.ndarray, eps: float):
        inv_M = sp.diags(1.0 / diag_M)
        self.middle = kron_sandwich(F0C, (B @ inv_M).tocsr(), (inv_M @ B.T).tocsr())
        self.poisson = poisson
        self.eps = eps

    def __call__(self, v_p: TensorTrain3) -> TensorTrain3:
        w = self.poisson.solve(v_p)
        w = kron_apply_rounded(self.middle, w, self.eps)
        return self.poisson.solve(w)


class MeanBlockSolver:
    """Inexact solve with F_0 + C by inner low-rank GMRES.

    The inner preconditioner is (I - C)^-1 (x) I (x) K^-1 with
    K = tau^-1 M + A_0 + N(w_avg); (I - C)^-1 is a cumulative sum over time.
    """

    def __init__(
        self,
        F0C: KronSumOperator,
        K: sp.spmatrix,
        tol: float,
        eps: float,
        maxit: int,
    ):
        self.F0C = F0C
        self.lu = factorize(K, "mean time-stepping operator")
        self.tol = tol
        self.eps = eps
        self.maxit = maxit
        self.iterations: List[int] = []
        self.failures = 0

    def precondition(self, v: TensorTrain3) -> TensorTrain3:
        v = apply_spatial(v, self.lu.solve)
        return apply_time(v, lambda X: np.cumsum(X, axis=0))

    def __call__(self, y: TensorTrain3) -> TensorTrain3:
        result = lr_gmres(
            self.F0C, y, self.precondition, tol=self.tol, eps=self.eps, maxit=self.maxit, name="inner gmres"
        )
        self.iterations.append(result.iterations)
        if not result.converged:
            self.failures += 1
        return result.solution


class BlockTriangularPreconditioner:
    def __init__(
        self,
        schur: Callable[[TensorTrain3], TensorTrain3],
        block_solve: Callable[[TensorTrain3], TensorTrain3],
        Bt_op: KronSumOperator,
        eps: float,
    ):
        self.schur = schur
        self.block_solve = block_solve
        self.Bt_op = Bt_op
        self.eps = eps

    def __call__(self, v: BlockTT) -> BlockTT:
        p_hat = (-self.schur(v.p)).round(self.eps)
        rhs = (v.u - kron_apply(self.Bt_op, p_hat)).round(self.eps)
        u_hat = self.block_solve(rhs).round(self.eps)
        return BlockTT(u_hat, p_hat)


class DenseInverse:
    """Exact inverse of an assembled operator acting on full tensors; small problems only."""

    def __init__(self, matrix: np.ndarray, shape: Tuple[int, int, int]):
        size = int(np.prod(shape))
        cap = get_settings().ORACLE_DOF_CAP
        if size > cap:
            raise SizeCapError(f"Dense inverse of size {size} exceeds the cap of {cap}")
        self.lu = la.lu_factor(np.asarray(matrix))
        self.shape = shape

    def __call__(self, v: TensorTrain3) -> TensorTrain3:
        x = la.lu_solve(self.lu, v.full().ravel())
        return tt_from_full(x.reshape(self.shape), 0.0)


def exact_preconditioner(
    F_plus_C: KronSumOperator, B_op: KronSumOperator, Bt_op: KronSumOperator
) -> BlockTriangularPreconditioner:
    """Block triangular preconditioner with the exact Schur complement B (F + C)^-1 B^T."""
    F = F_plus_C.to_sparse().toarray()
    B = B_op.to_sparse().toarray()
    S = B @ la.solve(F, B.T)
    return BlockTriangularPreconditioner(
        schur=DenseInverse(S, B_op.row_shape),
        block_solve=DenseInverse(F, F_plus_C.row_shape),
        Bt_op=Bt_op,
        eps=0.0,
    )


def mean_operators(
    spatial, tau: float, n_t: int, n_xi: int, u_tilde: Optional[TensorTrain3], eps_conv: float
) -> Tuple[KronSumOperator, Sequence[Tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Mean operator F_0 + C and the low-rank mean convecting field it was built from."""
    if u_tilde is None:
        factors, w_avg = [], np.zeros(2 * spatial.n_nodes)
    else:
        factors, w_avg = mean_convection_factors(u_tilde, eps_conv)
    return build_F0C(spatial, tau, n_t, n_xi, factors), factors, w_avg


def build_preconditioner(
    spatial,
    tau: float,
    n_t: int,
    n_xi: int,
    Bt_op: KronSumOperator,
    u_tilde: Optional[TensorTrain3],
    config: PicardConfig,
) -> BlockTriangularPreconditioner:
    """Mean-based PCD or LSC preconditioner for the current convecting field.

    Args:
        spatial: SpatialDiscretization
        tau: Time step
        n_t: Number of time steps
        n_xi: Number of chaos basis functions
        Bt_op: Discrete gradient operator I (x) I (x) B^T
        u_tilde: Truncated full convecting field, or None for the Stokes problem
        config: Tolerances and preconditioner kind

    Returns:
        BlockTriangularPreconditioner
    """
    F0C, factors, w_avg = mean_operators(spatial, tau, n_t, n_xi, u_tilde, config.eps_conv)
    poisson = PressurePoisson(spatial.B, spatial.diag_M)

    if config.preconditioner == "pcd":
        Fp0Cp = build_Fp0Cp(spatial, tau, n_t, n_xi, factors)
        schur = PCDSchur(Fp0Cp, poisson, spatial.diag_Mp, config.eps_gmres)
    else:
        schur = LSCSchur(F0C, poisson, spatial.B, spatial.diag_M, config.eps_gmres)

    K = spatial.M / tau + spatial.A[0]
    if u_tilde is not None:
        K = K + spatial.convection(w_avg)
    block_solve = MeanBlockSolver(F0C, K, tol=config.tol_inner, eps=config.eps_gmres, maxit=config.maxit_inner)
    logger.debug(
        f"Built {config.preconditioner.upper()} preconditioner with {len(factors)} mean convection terms"
    )
    return BlockTriangularPreconditioner(schur, block_solve, Bt_op, config.eps_gmres)
