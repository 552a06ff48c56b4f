import numpy as np
import pytest

from src.discretization.fem import (
    InflowProfile,
    TaylorHoodAssembler,
    apply_dirichlet,
    assemble_matrices,
    assemble_rhs_allatonce,
    lifting_tt,
    time_grid,
)
from src.discretization.mesh import build_mesh
from src.utils.errors import DimensionMismatchError


@pytest.fixture(scope="module")
def channel():
    mesh = build_mesh("channel", 0.5)
    return mesh, TaylorHoodAssembler(mesh)


def test_mass_integrates_constants(channel):
    mesh, assembler = channel
    ones = np.ones(mesh.n_nodes)
    assert ones @ assembler.mass() @ ones == pytest.approx(mesh.area)
    pones = np.ones(mesh.n_pnodes)
    assert pones @ assembler.pressure_mass() @ pones == pytest.approx(mesh.area)


def test_stiffness_kernel_and_scaling(channel):
    mesh, assembler = channel
    A = assembler.stiffness()
    assert np.allclose(A @ np.ones(mesh.n_nodes), 0.0)
    assert np.allclose(assembler.stiffness(np.full(mesh.n_pnodes, 0.3)).toarray(), 0.3 * A.toarray())
    x = mesh.nodes[:, 0]
    # Dirichlet energy of u = x1 over the unit square
    assert x @ A @ x == pytest.approx(1.0)
    with pytest.raises(DimensionMismatchError):
        assembler.stiffness(np.ones(mesh.n_nodes))


def test_divergence_of_simple_fields(channel):
    mesh, assembler = channel
    B = assembler.divergence()
    n = mesh.n_nodes
    constant = np.concatenate([np.ones(n), np.zeros(n)])
    assert np.allclose(B @ constant, 0.0)
    # div (x1, 0) = 1, so B u = -(psi_i, 1)
    linear = np.concatenate([mesh.nodes[:, 0], np.zeros(n)])
    assert np.allclose(B @ linear, -(assembler.pressure_mass() @ np.ones(mesh.n_pnodes)))


def test_convection_of_simple_fields(channel):
    mesh, assembler = channel
    n = mesh.n_nodes
    rng = np.random.default_rng(0)
    N = assembler.convection(rng.standard_normal(2 * n))
    assert np.allclose(N @ np.ones(n), 0.0)
    # (1, 0) . grad x1 = 1
    uniform = assembler.convection(np.concatenate([np.ones(n), np.zeros(n)]))
    assert np.allclose(uniform @ mesh.nodes[:, 0], assembler.mass() @ np.ones(n))
    with pytest.raises(DimensionMismatchError):
        assembler.convection(np.ones(n))


def test_spatial_discretization_restrictions(tiny_setup):
    spatial = tiny_setup.spatial
    assert spatial.n_u == 24 and spatial.n_p == 9
    assert spatial.M.shape == (24, 24)
    assert len(spatial.A) == 3
    assert spatial.B.shape == (9, 24)
    assert spatial.B_D.shape == (9, 2 * len(tiny_setup.mesh.dirichlet_nodes))
    assert np.all(np.linalg.eigvalsh(spatial.M.toarray()) > 0)
    assert np.allclose(spatial.A[0].toarray(), spatial.A[0].toarray().T)
    u = np.arange(spatial.n_u, dtype=float)
    full = spatial.embed(u)
    assert np.allclose(full[spatial.free_dofs], u)
    assert np.allclose(full[spatial.dirichlet_dofs], 0.0)


def test_convection_column_variants(tiny_setup):
    spatial = tiny_setup.spatial
    rng = np.random.default_rng(2)
    w = rng.standard_normal(2 * spatial.n_nodes)
    N_all = spatial.convection(w, columns="all")
    N_free = spatial.convection(w)
    assert N_all.shape == (spatial.n_u, 2 * spatial.n_nodes)
    assert np.allclose(N_all[:, spatial.free_dofs].toarray(), N_free.toarray())
    with pytest.raises(ValueError):
        spatial.convection(w, columns="some")


def test_assemble_with_convecting_field(tiny_setup):
    mesh = tiny_setup.mesh
    fields = [np.full(mesh.n_pnodes, 0.02)]
    w = np.ones(24)
    spatial = assemble_matrices(mesh, fields, w=w)
    assert spatial.N is not None
    assert np.allclose(spatial.N.toarray(), spatial.convection(spatial.embed(w)).toarray())


def test_inflow_profile_and_boundary_values(tiny_setup):
    spatial, mesh = tiny_setup.spatial, tiny_setup.mesh
    inflow = InflowProfile.for_mesh(mesh)
    assert inflow.profile(np.array([0.0, 0.5, 1.0])) == pytest.approx([0.0, 1.0, 0.0])
    assert inflow.ramp(0.0) == pytest.approx(0.0)
    assert inflow.ramp(1.0) == pytest.approx(1.0 - np.exp(-10.0))

    g = spatial.boundary_values(inflow)
    full = np.zeros(2 * spatial.n_nodes)
    full[spatial.dirichlet_dofs] = g
    x1 = full[: spatial.n_nodes]
    assert np.allclose(full[spatial.n_nodes :], 0.0)
    assert np.allclose(x1[mesh.wall_nodes], 0.0)
    assert x1.max() == pytest.approx(1.0)


def test_apply_dirichlet(tiny_setup):
    spatial, inflow = tiny_setup.spatial, tiny_setup.inflow
    lift = apply_dirichlet(spatial, inflow, 0.25)
    scale = float(inflow.ramp(0.25))
    assert np.allclose(lift.g_dirichlet, scale * spatial.boundary_values(inflow))
    assert np.allclose(lift.mass_rhs, -(spatial.M_FD @ lift.g_dirichlet))
    assert len(lift.stiffness_rhs) == 3
    assert np.allclose(lift.divergence_rhs, -(spatial.B_D @ lift.g_dirichlet))
    assert np.allclose(lift.g_full[spatial.free_dofs], 0.0)


def test_lifting_tensor(tiny_setup):
    spatial, inflow = tiny_setup.spatial, tiny_setup.inflow
    g = lifting_tt(spatial, inflow, 4, 0.25, 3)
    assert g.ranks == (1, 1)
    dense = g.full()
    assert np.allclose(dense[:, 1:], 0.0)
    for k, t in enumerate(time_grid(4, 0.25)):
        assert np.allclose(dense[k, 0], apply_dirichlet(spatial, inflow, t).g_full)


def test_rhs_matches_slice_by_slice_assembly(tiny_setup):
    spatial, inflow, gpc = tiny_setup.spatial, tiny_setup.inflow, tiny_setup.gpc
    n_t, tau = 4, 0.25
    f_u, f_p = assemble_rhs_allatonce(spatial, inflow, n_t, tau, gpc)
    assert f_u.ranks[0] <= 2 and f_u.ranks[1] <= gpc.m + 2
    assert f_p.ranks == (1, 1)

    U, P = f_u.full(), f_p.full()
    previous = np.zeros(len(spatial.dirichlet_dofs))
    for k, t in enumerate(time_grid(n_t, tau)):
        lift = apply_dirichlet(spatial, inflow, t)
        expected = np.zeros((gpc.n_xi, spatial.n_u))
        expected[0] = -(spatial.M_FD @ (lift.g_dirichlet - previous)) / tau
        for G_l, a_rhs in zip(gpc.G, lift.stiffness_rhs):
            expected += np.outer(G_l.toarray()[:, 0], a_rhs)
        assert np.allclose(U[k], expected, atol=1e-10)
        assert np.allclose(P[k, 0], lift.divergence_rhs)
        assert np.allclose(P[k, 1:], 0.0)
        previous = lift.g_dirichlet


def test_deterministic_rhs_is_single_mode(deterministic_setup):
    problem = deterministic_setup.problem
    assert problem.n_xi == 1
    assert problem.f_u.shape == (4, 1, 24)
