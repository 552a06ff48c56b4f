"""Legendre chaos basis, triple-product matrices and the KL viscosity model."""
from dataclasses import dataclass
from itertools import product
from math import ceil, comb
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from numpy.polynomial import legendre
from scipy.spatial.distance import cdist

from src.utils.errors import ConfigurationError
from src.utils.logger import setup_logger

logger = setup_logger('stochastic_basis')

SQRT3 = np.sqrt(3.0)
DROP_TOL = 1e-12


@dataclass(frozen=True)
class GpcBasis:
    """Multivariate Legendre polynomials of total degree <= d_psi in m uniform variables.

    Each variable is uniform on [-sqrt(3), sqrt(3)] (zero mean, unit variance).
    Index 0 is the constant polynomial.
    """

    m: int
    d_psi: int
    multi_indices: np.ndarray  # (n_xi, m)

    @property
    def n_xi(self) -> int:
        return self.multi_indices.shape[0]

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        """Values of all basis functions at samples xi of shape (S, m); returns (S, n_xi)."""
        xi = np.atleast_2d(xi)
        values = np.ones((xi.shape[0], self.n_xi))
        for k in range(self.m):
            table = univariate_values(self.d_psi, xi[:, k])
            values *= table[:, self.multi_indices[:, k]]
        return values


@dataclass(frozen=True)
class TripleProductMatrices:
    basis: GpcBasis
    G: List[sp.csr_matrix]  # G[l] = <xi_l psi_r psi_s>, G[0] = I
    H: List[sp.csr_matrix]  # H[l] = <psi_l psi_r psi_s>, H[0] = I

    @property
    def n_xi(self) -> int:
        return self.basis.n_xi

    @property
    def m(self) -> int:
        return self.basis.m


@dataclass(frozen=True)
class KLViscosity:
    nu0: float
    sigma: float
    b: float
    eigenvalues: np.ndarray  # (m,) descending
    eigenvectors: np.ndarray  # (n_nodes, m), mass-orthonormal columns

    @property
    def m(self) -> int:
        return self.eigenvalues.shape[0]


def graded_multi_indices(m: int, d_psi: int) -> np.ndarray:
    """Total degree ascending; within a degree, larger powers of xi_1 first."""
    indices = []
    for degree in range(d_psi + 1):
        level = [idx for idx in product(range(degree + 1), repeat=m) if sum(idx) == degree]
        indices.extend(sorted(level, reverse=True))
    return np.array(indices, dtype=int).reshape(-1, m)


def build_basis(m: int, d_psi: int) -> GpcBasis:
    if m < 0 or d_psi < 0:
        raise ConfigurationError(f"m and d_psi must be non-negative, got m={m}, d_psi={d_psi}")
    indices = graded_multi_indices(m, d_psi)
    expected = comb(m + d_psi, m)
    if len(indices) != expected:
        raise ConfigurationError(f"Basis has {len(indices)} functions, expected {expected}")
    return GpcBasis(m=m, d_psi=d_psi, multi_indices=indices)


def _raw_univariate(degree: int, xi: np.ndarray) -> np.ndarray:
    """sqrt(2n+1) P_n(xi/sqrt(3)) for n = 0..degree, shape (len(xi), degree+1)."""
    x = np.asarray(xi, dtype=float) / SQRT3
    eye = np.eye(degree + 1)
    return np.stack([np.sqrt(2 * n + 1) * legendre.legval(x, eye[n]) for n in range(degree + 1)], axis=1)


def _gauss_rule(n_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [-sqrt(3), sqrt(3)] with weights of the uniform density."""
    x, w = legendre.leggauss(n_points)
    return SQRT3 * x, w / 2.0


def univariate_values(degree: int, xi: np.ndarray) -> np.ndarray:
    """Orthonormal univariate polynomials, normalized by quadrature."""
    nodes, weights = _gauss_rule(degree + 1)
    norms = np.sqrt(weights @ _raw_univariate(degree, nodes) ** 2)
    return _raw_univariate(degree, xi) / norms


def triple_product_table(degree: int, n_points: int) -> np.ndarray:
    """T[a, b, c] = <psi_a psi_b psi_c> for univariate indices up to degree."""
    nodes, weights = _gauss_rule(n_points)
    values = univariate_values(degree, nodes)
    return np.einsum("q,qa,qb,qc->abc", weights, values, values, values)


def _sparse_symmetric(dense: np.ndarray) -> sp.csr_matrix:
    dense = np.where(np.abs(dense) < DROP_TOL, 0.0, dense)
    return sp.csr_matrix(0.5 * (dense + dense.T))


def triple_products(basis: GpcBasis, n_points: Optional[int] = None) -> TripleProductMatrices:
    """Assemble G_0..G_m and H_1..H_{n_xi} by tensorized Gauss-Legendre quadrature.

    Args:
        basis: Chaos basis
        n_points: Points per dimension; defaults to ceil((3*d + 2)/2), exact for the integrands

    Returns:
        TripleProductMatrices with exact identities for G_0 and H_1
    """
    degree = max(basis.d_psi, 1)
    if n_points is None:
        n_points = ceil((3 * degree + 2) / 2)
    table = triple_product_table(degree, n_points)
    idx = basis.multi_indices
    n = basis.n_xi

    G = [sp.identity(n, format="csr")]
    for l in range(basis.m):
        dense = table[1][np.ix_(idx[:, l], idx[:, l])].copy()
        for k in range(basis.m):
            if k != l:
                dense *= idx[:, k][:, None] == idx[:, k][None, :]
        G.append(_sparse_symmetric(dense))

    H = [sp.identity(n, format="csr")]
    for alpha in idx[1:]:
        dense = np.ones((n, n))
        for k in range(basis.m):
            dense *= table[alpha[k]][np.ix_(idx[:, k], idx[:, k])]
        H.append(_sparse_symmetric(dense))

    logger.debug(f"Triple products for n_xi={n}: {sum(g.nnz for g in G)} G and {sum(h.nnz for h in H)} H nonzeros")
    return TripleProductMatrices(basis=basis, G=G, H=H)


def exponential_covariance(nodes: np.ndarray, b: float) -> np.ndarray:
    """c(x, y) = exp(-||x - y||_1 / b) at all node pairs."""
    return np.exp(-cdist(nodes, nodes, metric="cityblock") / b)


def kl_expand(nodes: np.ndarray, mass: sp.spmatrix, b: float, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Leading eigenpairs of the covariance operator by nodal Galerkin projection.

    Solves (M C M) a = beta M a and keeps the m largest eigenvalues.

    Args:
        nodes: Nodal coordinates, shape (n, dim)
        mass: Nodal mass matrix of the same nodes
        b: Correlation length
        m: Number of eigenpairs

    Returns:
        (eigenvalues descending, eigenvectors as mass-orthonormal columns)
    """
    if b <= 0:
        raise ConfigurationError(f"Correlation length must be positive, got {b}")
    nodes = np.asarray(nodes, dtype=float).reshape(len(nodes), -1)
    n = nodes.shape[0]
    if m > n:
        raise ConfigurationError(f"Requested {m} KL terms but the mesh has only {n} nodes")
    if m == 0:
        return np.zeros(0), np.zeros((n, 0))

    M = mass.toarray() if sp.issparse(mass) else np.asarray(mass)
    C = exponential_covariance(nodes, b)
    try:
        values, vectors = la.eigh(M @ C @ M, M, subset_by_index=[n - m, n - 1])
    except la.LinAlgError as exc:
        raise ConfigurationError(f"KL eigensolve failed: {exc}") from exc

    order = np.argsort(values)[::-1]
    values = values[order]
    vectors = vectors[:, order]
    signs = np.sign(vectors[np.argmax(np.abs(vectors), axis=0), np.arange(m)])
    vectors = vectors * np.where(signs == 0, 1.0, signs)
    logger.debug(f"KL eigenvalues: {values}")
    return values, vectors


def build_kl_viscosity(
    nu0: float, sigma: float, b: float, m: int, nodes: np.ndarray, mass: sp.spmatrix
) -> KLViscosity:
    values, vectors = kl_expand(nodes, mass, b, m)
    if np.any(values <= 0):
        raise ConfigurationError(f"Covariance has non-positive eigenvalues among the first {m}: {values}")
    return KLViscosity(nu0=nu0, sigma=sigma, b=b, eigenvalues=values, eigenvectors=vectors)


def viscosity_fields(kl: KLViscosity) -> List[np.ndarray]:
    """Nodal fields nu_0 and nu_l = nu0 * sigma * sqrt(beta_l) * a_l."""
    n = kl.eigenvectors.shape[0]
    fields = [np.full(n, kl.nu0)]
    for l in range(kl.m):
        fields.append(kl.nu0 * kl.sigma * np.sqrt(kl.eigenvalues[l]) * kl.eigenvectors[:, l])
    return fields


def check_positivity(fields: List[np.ndarray], n_samples: int = 1000, seed: int = 0) -> float:
    """Smallest viscosity over random samples of xi and all nodes.

    Raises:
        ConfigurationError: if any sampled viscosity is not positive
    """
    mean = fields[0]
    m = len(fields) - 1
    if m == 0:
        nu_min = float(mean.min())
    else:
        rng = np.random.default_rng(seed)
        xi = rng.uniform(-SQRT3, SQRT3, size=(m, n_samples))
        nu = mean[:, None] + np.column_stack(fields[1:]) @ xi
        nu_min = float(nu.min())

    if nu_min <= 0:
        raise ConfigurationError(f"Viscosity is not positive for sampled parameters (min {nu_min:.3e}); reduce sigma")
    if nu_min < 0.5 * float(mean.min()):
        logger.warning(f"Sampled viscosity drops to {nu_min:.3e}, below half of the mean")
    return nu_min
