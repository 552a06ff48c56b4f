import numpy as np
import pytest
import scipy.sparse as sp

from src.config import PicardConfig, get_settings
from src.lowrank.block_tt import BlockTT
from src.lowrank.kron_ops import KronSumOperator, KronTerm, build_F0C, build_Fp0Cp, kron_apply
from src.lowrank.tt_core import tt_random, tt_zeros
from src.solvers.gmres import lr_gmres
from src.solvers.preconditioners import (
    BlockTriangularPreconditioner,
    DenseInverse,
    LSCSchur,
    MeanBlockSolver,
    PCDSchur,
    PressurePoisson,
    build_preconditioner,
    exact_preconditioner,
    factorize,
    mean_operators,
)
from src.utils.errors import SingularOperatorError, SizeCapError

N_T, TAU = 4, 0.25


def big(matrix, n_blocks):
    return sp.kron(sp.identity(n_blocks), matrix).toarray()


def test_idealized_preconditioner_converges_in_two_iterations(tiny_setup):
    problem = tiny_setup.problem
    system = problem.saddle_system(None)
    P = exact_preconditioner(system.F_plus_C, system.B_op, system.Bt_op)
    result = lr_gmres(system, system.rhs, P, tol=1e-10, eps=1e-14, maxit=10)
    assert result.converged
    assert result.iterations <= 2
    assert result.history[-1] < 1e-10


def test_preconditioner_with_zero_pressure_part(tiny_setup, rng):
    problem = tiny_setup.problem
    system = problem.saddle_system(None)
    P = exact_preconditioner(system.F_plus_C, system.B_op, system.Bt_op)
    v_u = tt_random(problem.velocity_shape, (2, 2), rng)
    out = P(BlockTT(v_u, tt_zeros(problem.pressure_shape)))
    assert out.p.norm() == 0.0
    F = system.F_plus_C.to_sparse().toarray()
    assert np.allclose(out.u.full().ravel(), np.linalg.solve(F, v_u.full().ravel()))


def test_pressure_poisson_solve(tiny_setup, rng):
    spatial = tiny_setup.spatial
    poisson = PressurePoisson(spatial.B, spatial.diag_M)
    z = tt_random((N_T, 3, spatial.n_p), (2, 2), rng)
    P = (spatial.B @ sp.diags(1.0 / spatial.diag_M) @ spatial.B.T).toarray()
    expected = np.linalg.solve(P, z.full().reshape(-1, spatial.n_p).T).T
    assert np.allclose(poisson.solve(z).full().reshape(-1, spatial.n_p), expected)


def test_lsc_matches_dense_formula(tiny_setup, rng):
    spatial = tiny_setup.spatial
    n_xi = 3
    F0C, _, _ = mean_operators(spatial, TAU, N_T, n_xi, None, 1e-3)
    poisson = PressurePoisson(spatial.B, spatial.diag_M)
    schur = LSCSchur(F0C, poisson, spatial.B, spatial.diag_M, eps=1e-14)
    v = tt_random((N_T, n_xi, spatial.n_p), (2, 2), rng)

    blocks = N_T * n_xi
    B = big(spatial.B, blocks)
    Minv = big(sp.diags(1.0 / spatial.diag_M), blocks)
    P = B @ Minv @ B.T
    middle = B @ Minv @ F0C.to_sparse().toarray() @ Minv @ B.T
    expected = np.linalg.solve(P, middle @ np.linalg.solve(P, v.full().ravel()))
    assert np.allclose(schur(v).full().ravel(), expected, rtol=1e-8, atol=1e-10 * np.abs(expected).max())


def test_pcd_matches_dense_formula(tiny_setup, rng):
    spatial = tiny_setup.spatial
    n_xi = 3
    Fp0Cp = build_Fp0Cp(spatial, TAU, N_T, n_xi, [])
    poisson = PressurePoisson(spatial.B, spatial.diag_M)
    schur = PCDSchur(Fp0Cp, poisson, spatial.diag_Mp, eps=1e-14)
    v = tt_random((N_T, n_xi, spatial.n_p), (2, 2), rng)

    blocks = N_T * n_xi
    P = big(spatial.B @ sp.diags(1.0 / spatial.diag_M) @ spatial.B.T, blocks)
    Mp_inv = big(sp.diags(1.0 / spatial.diag_Mp), blocks)
    expected = np.linalg.solve(P, Fp0Cp.to_sparse().toarray() @ Mp_inv @ v.full().ravel())
    assert np.allclose(schur(v).full().ravel(), expected, rtol=1e-8, atol=1e-10 * np.abs(expected).max())


def test_pcd_with_mass_in_place_of_convection_diffusion(tiny_setup, rng):
    spatial = tiny_setup.spatial
    mass_only = KronSumOperator.from_terms([KronTerm(sp.identity(1), sp.identity(1), sp.diags(spatial.diag_Mp))])
    poisson = PressurePoisson(spatial.B, spatial.diag_M)
    schur = PCDSchur(mass_only, poisson, spatial.diag_Mp, eps=1e-14)
    v = tt_random((1, 1, spatial.n_p), (1, 1), rng)
    expected = poisson.solve(v)
    assert np.allclose(schur(v).full(), expected.full())


def test_mean_block_solver_single_step_is_exact(tiny_setup, rng):
    spatial = tiny_setup.spatial
    F0C = build_F0C(spatial, TAU, 1, 3, [])
    K = spatial.M / TAU + spatial.A[0]
    solver = MeanBlockSolver(F0C, K, tol=1e-10, eps=1e-14, maxit=10)
    y = tt_random((1, 3, spatial.n_u), (1, 2), rng)
    v = solver(y)
    assert solver.iterations[-1] <= 2
    assert solver.failures == 0
    assert (kron_apply(F0C, v) - y).norm() <= 1e-9 * y.norm()


def test_mean_block_solver_zero_and_cumulative_preconditioner(tiny_setup, rng):
    spatial = tiny_setup.spatial
    F0C = build_F0C(spatial, TAU, N_T, 3, [])
    K = spatial.M / TAU + spatial.A[0]
    solver = MeanBlockSolver(F0C, K, tol=1e-8, eps=1e-12, maxit=50)
    assert solver(tt_zeros((N_T, 3, spatial.n_u))).norm() == 0.0

    y = tt_random((N_T, 3, spatial.n_u), (2, 2), rng)
    v = solver(y)
    assert solver.failures == 0
    assert (kron_apply(F0C, v) - y).norm() <= 2e-8 * y.norm()

    # The preconditioner applies K^-1 in space and cumulative sums in time
    w = solver.precondition(y).full()
    Kinv_y = np.linalg.solve(K.toarray(), y.full().reshape(-1, spatial.n_u).T).T.reshape(y.shape)
    assert np.allclose(w, np.cumsum(Kinv_y, axis=0))


@pytest.mark.parametrize("kind", ["pcd", "lsc"])
def test_mean_based_preconditioners_reduce_iterations(tiny_setup, kind):
    problem = tiny_setup.problem
    config = PicardConfig(preconditioner=kind, tol_gmres=1e-6, eps_gmres=1e-10)
    U = problem.lifting
    system = problem.saddle_system(U.round(config.eps_conv))
    P = build_preconditioner(
        problem.spatial, problem.tau, problem.n_t, problem.n_xi, problem.Bt_op, U.round(config.eps_conv), config
    )
    preconditioned = lr_gmres(system, system.rhs, P, tol=1e-6, eps=1e-10, maxit=100)
    plain = lr_gmres(system, system.rhs, None, tol=1e-6, eps=1e-10, maxit=100)
    assert preconditioned.converged
    assert preconditioned.iterations < plain.iterations
    out = P(system.rhs)
    assert out.u.shape == problem.velocity_shape and out.p.shape == problem.pressure_shape


def test_block_triangular_composition(rng):
    schur = lambda v: v * 2.0
    block_solve = lambda v: v * 0.5
    Bt = KronSumOperator.from_terms([KronTerm(sp.identity(2), sp.identity(2), np.ones((3, 1)))])
    P = BlockTriangularPreconditioner(schur, block_solve, Bt, eps=1e-14)
    v = BlockTT(tt_random((2, 2, 3), (1, 1), rng), tt_random((2, 2, 1), (1, 1), rng))
    out = P(v)
    p_expected = -2.0 * v.p.full()
    u_expected = 0.5 * (v.u.full() - p_expected * np.ones((1, 1, 3)))
    assert np.allclose(out.p.full(), p_expected)
    assert np.allclose(out.u.full(), u_expected)


def test_factorize_singular_matrix():
    with pytest.raises(SingularOperatorError):
        factorize(sp.csc_matrix(np.ones((2, 2))), "test operator")


def test_dense_inverse_respects_cap(monkeypatch):
    settings = get_settings()
    monkeypatch.setattr(settings, "ORACLE_DOF_CAP", 10)
    with pytest.raises(SizeCapError):
        DenseInverse(np.eye(12), (1, 3, 4))
