import numpy as np
import pytest

from src.discretization.fem import TaylorHoodAssembler
from src.discretization.mesh import build_mesh
from src.discretization.stochastic_basis import (
    _gauss_rule,
    build_basis,
    build_kl_viscosity,
    check_positivity,
    exponential_covariance,
    graded_multi_indices,
    kl_expand,
    triple_products,
    univariate_values,
    viscosity_fields,
)
from src.utils.errors import ConfigurationError


@pytest.fixture(scope="module")
def benchmark_gpc():
    return triple_products(build_basis(3, 3))


@pytest.fixture(scope="module")
def channel_q1():
    mesh = build_mesh("channel", 0.25)
    return mesh.pnodes, TaylorHoodAssembler(mesh).pressure_mass()


def test_basis_size_and_ordering():
    basis = build_basis(3, 3)
    assert basis.n_xi == 20
    assert np.array_equal(basis.multi_indices[0], [0, 0, 0])
    # Degree-one functions come next, xi_1 first
    assert np.array_equal(basis.multi_indices[1:4], np.eye(3, dtype=int))
    assert np.all(np.diff(basis.multi_indices.sum(axis=1)) >= 0)
    assert graded_multi_indices(0, 3).shape == (1, 0)


def test_univariate_polynomials_are_orthonormal():
    nodes, weights = _gauss_rule(8)
    values = univariate_values(4, nodes)
    gram = values.T @ (weights[:, None] * values)
    assert np.allclose(gram, np.eye(5), atol=1e-13)


def test_basis_evaluation_is_orthonormal():
    basis = build_basis(2, 2)
    nodes, weights = _gauss_rule(4)
    X1, X2 = np.meshgrid(nodes, nodes, indexing="ij")
    W = np.outer(weights, weights).ravel()
    values = basis.evaluate(np.column_stack([X1.ravel(), X2.ravel()]))
    assert np.allclose(values.T @ (W[:, None] * values), np.eye(basis.n_xi), atol=1e-13)


def test_identities_and_symmetry(benchmark_gpc):
    n = benchmark_gpc.n_xi
    assert len(benchmark_gpc.G) == 4
    assert len(benchmark_gpc.H) == n
    assert np.array_equal(benchmark_gpc.G[0].toarray(), np.eye(n))
    assert np.array_equal(benchmark_gpc.H[0].toarray(), np.eye(n))
    for mat in benchmark_gpc.G + benchmark_gpc.H:
        assert abs(mat - mat.T).max() == 0.0


def test_first_order_matrices_coincide(benchmark_gpc):
    # psi of multi-index e_l is xi_l itself, so H for those functions equals G_l
    for l in range(1, 4):
        assert np.allclose(benchmark_gpc.H[l].toarray(), benchmark_gpc.G[l].toarray(), atol=1e-14)


def test_known_triple_product_values(benchmark_gpc):
    G1 = benchmark_gpc.G[1].toarray()
    # <xi psi_0 psi_1> = 1 and <xi psi_1 psi_2> = 2 / sqrt(5) in the first variable
    assert G1[0, 1] == pytest.approx(1.0, abs=1e-14)
    assert G1[1, 4] == pytest.approx(2.0 / np.sqrt(5.0), abs=1e-14)


def test_quadrature_refinement_is_stable(benchmark_gpc):
    refined = triple_products(benchmark_gpc.basis, n_points=12)
    for coarse, fine in zip(benchmark_gpc.G + benchmark_gpc.H, refined.G + refined.H):
        assert abs(coarse - fine).max() <= 1e-13


def test_deterministic_basis():
    gpc = triple_products(build_basis(0, 3))
    assert gpc.n_xi == 1
    assert len(gpc.G) == 1 and len(gpc.H) == 1
    assert gpc.G[0].toarray() == pytest.approx(np.eye(1))


def test_negative_sizes_raise():
    with pytest.raises(ConfigurationError):
        build_basis(-1, 2)


def test_kl_eigenpairs(channel_q1):
    nodes, mass = channel_q1
    values, vectors = kl_expand(nodes, mass, 4.0, 3)
    assert values.shape == (3,) and vectors.shape == (len(nodes), 3)
    assert np.all(np.diff(values) <= 0) and np.all(values > 0)
    assert np.allclose(vectors.T @ (mass @ vectors), np.eye(3), atol=1e-10)
    # All eigenvalues are positive and sum to at most the domain area (unit variance)
    assert values.sum() <= 1.0 + 1e-10


def test_kl_eigen_residual(channel_q1):
    nodes, mass = channel_q1
    values, vectors = kl_expand(nodes, mass, 4.0, 3)
    M = mass.toarray()
    MCM = M @ exponential_covariance(nodes, 4.0) @ M
    for beta, a in zip(values, vectors.T):
        assert np.linalg.norm(MCM @ a - beta * (M @ a)) <= 1e-8 * beta


def test_kl_limits(channel_q1):
    nodes, mass = channel_q1
    values, vectors = kl_expand(nodes, mass, 4.0, 0)
    assert values.size == 0 and vectors.shape == (len(nodes), 0)
    with pytest.raises(ConfigurationError):
        kl_expand(nodes, mass, 4.0, len(nodes) + 1)
    with pytest.raises(ConfigurationError):
        kl_expand(nodes, mass, -1.0, 2)


def test_viscosity_fields_and_positivity(channel_q1):
    nodes, mass = channel_q1
    kl = build_kl_viscosity(0.02, 0.01, 4.0, 3, nodes, mass)
    fields = viscosity_fields(kl)
    assert len(fields) == 4
    assert np.allclose(fields[0], 0.02)
    nu_min = check_positivity(fields, n_samples=200, seed=0)
    assert 0.0 < nu_min < 0.02


def test_positivity_violation_raises(channel_q1):
    nodes, mass = channel_q1
    kl = build_kl_viscosity(0.02, 50.0, 4.0, 3, nodes, mass)
    with pytest.raises(ConfigurationError):
        check_positivity(viscosity_fields(kl), n_samples=200, seed=0)
