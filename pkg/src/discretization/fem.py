"""Q2-Q1 Taylor-Hood matrices on uniform square meshes.

Velocity vectors are ordered [x1 components of all nodes; x2 components of all nodes].
Operators used by the solver act on the free (non-Dirichlet) velocity dofs; pressure lives on
all Q1 nodes.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

from src.discretization.mesh import Q2_OFFSETS, StructuredMesh
from src.lowrank.tt_core import TensorTrain3, tt_rank1
from src.utils.errors import DimensionMismatchError
from src.utils.logger import setup_logger

if TYPE_CHECKING:
    from src.discretization.stochastic_basis import TripleProductMatrices

logger = setup_logger('fem')

_GAUSS_POINTS = 0.5 + np.array([-0.5 * np.sqrt(0.6), 0.0, 0.5 * np.sqrt(0.6)])
_GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


def _quadratic(s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """1D quadratic Lagrange values and derivatives at nodes 0, 1/2, 1."""
    values = np.stack([2 * s**2 - 3 * s + 1, 4 * s * (1 - s), s * (2 * s - 1)], axis=-1)
    derivs = np.stack([4 * s - 3, 4 - 8 * s, 4 * s - 1], axis=-1)
    return values, derivs


def _linear(s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values = np.stack([1 - s, s], axis=-1)
    derivs = np.stack([-np.ones_like(s), np.ones_like(s)], axis=-1)
    return values, derivs


def reference_tables() -> dict:
    """Basis values and reference gradients at the 3x3 Gauss points of [0, 1]^2."""
    qx, qy = np.meshgrid(_GAUSS_POINTS, _GAUSS_POINTS, indexing="ij")
    qx, qy = qx.ravel(), qy.ravel()
    weights = np.outer(_GAUSS_WEIGHTS, _GAUSS_WEIGHTS).ravel()

    vx, dx = _quadratic(qx)
    vy, dy = _quadratic(qy)
    a, b = Q2_OFFSETS[:, 0], Q2_OFFSETS[:, 1]
    phi = vx[:, a] * vy[:, b]
    dphi = np.stack([dx[:, a] * vy[:, b], vx[:, a] * dy[:, b]], axis=-1)

    lx, ldx = _linear(qx)
    ly, ldy = _linear(qy)
    a, b = Q2_OFFSETS[:4, 0] // 2, Q2_OFFSETS[:4, 1] // 2
    psi = lx[:, a] * ly[:, b]
    dpsi = np.stack([ldx[:, a] * ly[:, b], lx[:, a] * ldy[:, b]], axis=-1)
    return {"weights": weights, "phi": phi, "dphi": dphi, "psi": psi, "dpsi": dpsi}


@dataclass(frozen=True)
class InflowProfile:
    """Parabolic inflow 1 - ((x2 - center)/half_width)^2 switched on by 1 - exp(-rate * t)."""

    center: float
    half_width: float
    rate: float = 10.0

    @classmethod
    def for_mesh(cls, mesh: StructuredMesh) -> "InflowProfile":
        return cls(center=mesh.geometry.inflow_center, half_width=mesh.geometry.inflow_half_width)

    def ramp(self, t) -> np.ndarray:
        return 1.0 - np.exp(-self.rate * np.asarray(t, dtype=float))

    def profile(self, x2: np.ndarray) -> np.ndarray:
        return np.clip(1.0 - ((np.asarray(x2) - self.center) / self.half_width) ** 2, 0.0, None)


class TaylorHoodAssembler:
    """Element-by-element assembly on affine square elements of side h.

    All elements share one reference element, so local matrices of constant-coefficient
    forms are computed once.
    """

    def __init__(self, mesh: StructuredMesh):
        self.mesh = mesh
        self.h = mesh.h
        self.ref = reference_tables()
        w = self.ref["weights"]
        self._mass_local = self.h**2 * np.einsum("q,qi,qj->ij", w, self.ref["phi"], self.ref["phi"])
        self._stiff_q = np.einsum("q,qid,qjd->qij", w, self.ref["dphi"], self.ref["dphi"])
        self._pmass_local = self.h**2 * np.einsum("q,qi,qj->ij", w, self.ref["psi"], self.ref["psi"])
        self._pstiff_local = np.einsum("q,qid,qjd->ij", w, self.ref["dpsi"], self.ref["dpsi"])
        self._div_local = [
            -self.h * np.einsum("q,qi,qj->ij", w, self.ref["psi"], self.ref["dphi"][:, :, d]) for d in range(2)
        ]

    def _assemble(self, local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sp.csr_matrix:
        n_el = rows.shape[0]
        local = np.broadcast_to(local, (n_el,) + local.shape[-2:])
        r = np.broadcast_to(rows[:, :, None], local.shape)
        c = np.broadcast_to(cols[:, None, :], local.shape)
        return sp.coo_matrix((local.ravel(), (r.ravel(), c.ravel())), shape=shape).tocsr()

    def _velocity_at_quadrature(self, w_full: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = self.mesh.n_nodes
        w_full = np.asarray(w_full, dtype=float)
        if w_full.shape != (2 * n,):
            raise DimensionMismatchError(f"Velocity field must have {2 * n} entries, got {w_full.shape}")
        phi = self.ref["phi"]
        elements = self.mesh.elements
        return w_full[:n][elements] @ phi.T, w_full[n:][elements] @ phi.T

    def mass(self) -> sp.csr_matrix:
        n = self.mesh.n_nodes
        return self._assemble(self._mass_local, self.mesh.elements, self.mesh.elements, (n, n))

    def stiffness(self, nu: Optional[np.ndarray] = None) -> sp.csr_matrix:
        """Scalar stiffness weighted by a Q1 nodal coefficient (unweighted if None)."""
        n = self.mesh.n_nodes
        if nu is None:
            local = self._stiff_q.sum(axis=0)
        else:
            nu = np.asarray(nu, dtype=float)
            if nu.shape != (self.mesh.n_pnodes,):
                raise DimensionMismatchError(f"Viscosity field must live on the {self.mesh.n_pnodes} Q1 nodes")
            nu_q = nu[self.mesh.pelements] @ self.ref["psi"].T
            local = np.einsum("eq,qij->eij", nu_q, self._stiff_q)
        return self._assemble(local, self.mesh.elements, self.mesh.elements, (n, n))

    def divergence(self) -> sp.csr_matrix:
        """[B_x1, B_x2] with [B_xd]_ij = -(psi_i, d phi_j / d x_d)."""
        shape = (self.mesh.n_pnodes, self.mesh.n_nodes)
        blocks = [self._assemble(local, self.mesh.pelements, self.mesh.elements, shape) for local in self._div_local]
        return sp.hstack(blocks, format="csr")

    def convection(self, w_full: np.ndarray) -> sp.csr_matrix:
        """Scalar transport matrix [N]_ij = (w . grad phi_j, phi_i)."""
        n = self.mesh.n_nodes
        w1, w2 = self._velocity_at_quadrature(w_full)
        ref = self.ref
        local = self.h * (
            np.einsum("q,eq,qi,qj->eij", ref["weights"], w1, ref["phi"], ref["dphi"][:, :, 0])
            + np.einsum("q,eq,qi,qj->eij", ref["weights"], w2, ref["phi"], ref["dphi"][:, :, 1])
        )
        return self._assemble(local, self.mesh.elements, self.mesh.elements, (n, n))

    def pressure_mass(self) -> sp.csr_matrix:
        n = self.mesh.n_pnodes
        return self._assemble(self._pmass_local, self.mesh.pelements, self.mesh.pelements, (n, n))

    def pressure_stiffness(self) -> sp.csr_matrix:
        n = self.mesh.n_pnodes
        return self._assemble(self._pstiff_local, self.mesh.pelements, self.mesh.pelements, (n, n))

    def pressure_convection(self, w_full: np.ndarray) -> sp.csr_matrix:
        n = self.mesh.n_pnodes
        w1, w2 = self._velocity_at_quadrature(w_full)
        ref = self.ref
        local = self.h * (
            np.einsum("q,eq,qi,qj->eij", ref["weights"], w1, ref["psi"], ref["dpsi"][:, :, 0])
            + np.einsum("q,eq,qi,qj->eij", ref["weights"], w2, ref["psi"], ref["dpsi"][:, :, 1])
        )
        return self._assemble(local, self.mesh.pelements, self.mesh.pelements, (n, n))


def _restrict(mat: sp.spmatrix, rows: np.ndarray, cols: np.ndarray) -> sp.csr_matrix:
    return mat.tocsr()[rows][:, cols].tocsr()


@dataclass
class SpatialDiscretization:
    mesh: StructuredMesh
    assembler: TaylorHoodAssembler
    nu0: float
    mass_full: sp.csr_matrix  # (2n, 2n)
    stiffness_full: List[sp.csr_matrix]  # A_0..A_m, (2n, 2n)
    divergence_full: sp.csr_matrix  # (n_p, 2n)
    M_p: sp.csr_matrix
    A_p: sp.csr_matrix  # nu0-weighted pressure Laplacian
    N: Optional[sp.csr_matrix] = None  # free-free convection of the field passed at assembly

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @cached_property
    def free_dofs(self) -> np.ndarray:
        return np.concatenate([self.mesh.free_nodes, self.mesh.free_nodes + self.n_nodes])

    @cached_property
    def dirichlet_dofs(self) -> np.ndarray:
        return np.concatenate([self.mesh.dirichlet_nodes, self.mesh.dirichlet_nodes + self.n_nodes])

    @property
    def n_u(self) -> int:
        return len(self.free_dofs)

    @property
    def n_p(self) -> int:
        return self.mesh.n_pnodes

    @property
    def m(self) -> int:
        return len(self.stiffness_full) - 1

    @cached_property
    def M(self) -> sp.csr_matrix:
        return _restrict(self.mass_full, self.free_dofs, self.free_dofs)

    @cached_property
    def A(self) -> List[sp.csr_matrix]:
        return [_restrict(a, self.free_dofs, self.free_dofs) for a in self.stiffness_full]

    @cached_property
    def B(self) -> sp.csr_matrix:
        return self.divergence_full[:, self.free_dofs].tocsr()

    @cached_property
    def M_FD(self) -> sp.csr_matrix:
        return _restrict(self.mass_full, self.free_dofs, self.dirichlet_dofs)

    @cached_property
    def A_FD(self) -> List[sp.csr_matrix]:
        return [_restrict(a, self.free_dofs, self.dirichlet_dofs) for a in self.stiffness_full]

    @cached_property
    def B_D(self) -> sp.csr_matrix:
        return self.divergence_full[:, self.dirichlet_dofs].tocsr()

    @cached_property
    def diag_M(self) -> np.ndarray:
        return self.M.diagonal()

    @cached_property
    def diag_Mp(self) -> np.ndarray:
        return self.M_p.diagonal()

    def convection(self, w_full: np.ndarray, columns: str = "free") -> sp.csr_matrix:
        """Vector convection operator of the full field w, rows restricted to free dofs."""
        scalar = self.assembler.convection(w_full)
        full = sp.block_diag((scalar, scalar), format="csr")
        if columns == "free":
            return _restrict(full, self.free_dofs, self.free_dofs)
        if columns == "all":
            return full[self.free_dofs].tocsr()
        raise ValueError(f"columns must be 'free' or 'all', got {columns}")

    def pressure_convection(self, w_full: np.ndarray) -> sp.csr_matrix:
        return self.assembler.pressure_convection(w_full)

    def embed(self, u_free: np.ndarray) -> np.ndarray:
        """Place free-dof values (first axis) into full velocity vectors with zero boundary values."""
        u_free = np.asarray(u_free)
        full = np.zeros((2 * self.n_nodes,) + u_free.shape[1:])
        full[self.free_dofs] = u_free
        return full

    def boundary_values(self, inflow: InflowProfile) -> np.ndarray:
        """Steady Dirichlet values on dirichlet_dofs (x1 component carries the inflow)."""
        nodes = self.mesh.dirichlet_nodes
        values = np.zeros(2 * len(nodes))
        on_inflow = np.isin(nodes, self.mesh.inflow_nodes)
        values[: len(nodes)][on_inflow] = inflow.profile(self.mesh.nodes[nodes[on_inflow], 1])
        return values


def assemble_matrices(
    mesh: StructuredMesh, viscosity_fields: Sequence[np.ndarray], w: Optional[np.ndarray] = None
) -> SpatialDiscretization:
    """Assemble every spatial matrix of the stochastic Galerkin system.

    Args:
        mesh: Q2/Q1 mesh
        viscosity_fields: Q1 nodal fields nu_0, nu_1, ..., nu_m
        w: Optional convecting velocity (full field or free dofs) for N(w)

    Returns:
        SpatialDiscretization
    """
    assembler = TaylorHoodAssembler(mesh)
    scalar_mass = assembler.mass()
    mass_full = sp.block_diag((scalar_mass, scalar_mass), format="csr")
    stiffness_full = []
    for nu in viscosity_fields:
        scalar = assembler.stiffness(nu)
        stiffness_full.append(sp.block_diag((scalar, scalar), format="csr"))
    nu0 = float(np.mean(viscosity_fields[0]))

    spatial = SpatialDiscretization(
        mesh=mesh,
        assembler=assembler,
        nu0=nu0,
        mass_full=mass_full,
        stiffness_full=stiffness_full,
        divergence_full=assembler.divergence(),
        M_p=assembler.pressure_mass(),
        A_p=nu0 * assembler.pressure_stiffness(),
    )
    if w is not None:
        w = np.asarray(w, dtype=float)
        if w.shape == (spatial.n_u,):
            w = spatial.embed(w)
        spatial.N = spatial.convection(w)
    logger.debug(f"Assembled spatial matrices: n_u={spatial.n_u}, n_p={spatial.n_p}, m={spatial.m}")
    return spatial


@dataclass(frozen=True)
class BoundaryLift:
    """Dirichlet data at one time and its contributions to the free-dof equations."""

    t: float
    g_dirichlet: np.ndarray
    g_full: np.ndarray
    mass_rhs: np.ndarray  # -M_FD g
    stiffness_rhs: List[np.ndarray]  # -A_l,FD g
    divergence_rhs: np.ndarray  # -B_D g


def apply_dirichlet(spatial: SpatialDiscretization, inflow: InflowProfile, t: float) -> BoundaryLift:
    g = float(inflow.ramp(t)) * spatial.boundary_values(inflow)
    g_full = np.zeros(2 * spatial.n_nodes)
    g_full[spatial.dirichlet_dofs] = g
    return BoundaryLift(
        t=t,
        g_dirichlet=g,
        g_full=g_full,
        mass_rhs=-(spatial.M_FD @ g),
        stiffness_rhs=[-(a @ g) for a in spatial.A_FD],
        divergence_rhs=-(spatial.B_D @ g),
    )


def time_grid(n_t: int, tau: float) -> np.ndarray:
    """Times t_k = k * tau of the unknown slices, k = 1..n_t."""
    return tau * np.arange(1, n_t + 1)


def lifting_tt(spatial: SpatialDiscretization, inflow: InflowProfile, n_t: int, tau: float, n_xi: int) -> TensorTrain3:
    """Full-field Dirichlet lifting ramp (x) e_1 (x) g as a rank-(1, 1) tensor train."""
    g_full = np.zeros(2 * spatial.n_nodes)
    g_full[spatial.dirichlet_dofs] = spatial.boundary_values(inflow)
    e1 = np.zeros(n_xi)
    e1[0] = 1.0
    return tt_rank1(inflow.ramp(time_grid(n_t, tau)), e1, g_full)


def assemble_rhs_allatonce(
    spatial: SpatialDiscretization,
    inflow: InflowProfile,
    n_t: int,
    tau: float,
    gpc: "TripleProductMatrices",
    eps: float = 1e-12,
) -> Tuple[TensorTrain3, TensorTrain3]:
    """Right-hand sides of all time steps from the Dirichlet lifting.

    With ramp values r_k (r_0 = 0) and steady boundary values g:
      f_u = (r_k - r_{k-1}) (x) e_1 (x) (-tau^-1 M_FD g) + r_k (x) sum_l G_l e_1 (x) (-A_l,FD g)
      f_p = r_k (x) e_1 (x) (-B_D g)

    Returns:
        (f_u, f_p) rounded with eps; f_u has ranks <= (2, m + 2)
    """
    G = gpc.G
    if len(G) != len(spatial.A_FD):
        raise DimensionMismatchError(f"{len(G)} stochastic matrices but {len(spatial.A_FD)} stiffness matrices")
    n_xi = G[0].shape[0]
    g = spatial.boundary_values(inflow)
    ramp = inflow.ramp(time_grid(n_t, tau))
    increments = np.diff(np.concatenate([[0.0], ramp]))

    core1 = np.column_stack([increments, ramp])
    space_rows = [-(spatial.M_FD @ g) / tau] + [-(a @ g) for a in spatial.A_FD]
    core3 = np.vstack(space_rows)
    core2 = np.zeros((2, n_xi, len(space_rows)))
    core2[0, 0, 0] = 1.0
    for l, G_l in enumerate(G):
        core2[1, :, l + 1] = G_l.tocsc()[:, 0].toarray().ravel()
    f_u = TensorTrain3(core1, core2, core3).round(eps)

    e1 = np.zeros(n_xi)
    e1[0] = 1.0
    f_p = tt_rank1(ramp, e1, -(spatial.B_D @ g)).round(eps)
    return f_u, f_p
