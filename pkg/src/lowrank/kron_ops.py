"""Sums of triple Kronecker products acting on three-mode tensor trains.

Each term is coeff * (X1 (x) X2 (x) X3) with X1 acting on time, X2 on the stochastic
mode and X3 on space. Applying an operator never forms the Kronecker products: every
factor multiplies one core and the results are concatenated into a new tensor train.
"""
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union, TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

from src.lowrank.tt_core import TensorTrain3, tt_round, tt_zeros
from src.utils.errors import DimensionMismatchError

if TYPE_CHECKING:
    from src.discretization.fem import SpatialDiscretization
    from src.discretization.stochastic_basis import TripleProductMatrices

Matrix = Union[sp.spmatrix, np.ndarray]


@dataclass(frozen=True)
class KronTerm:
    time: Matrix
    stoch: Matrix
    space: Matrix
    coeff: float = 1.0

    def __post_init__(self):
        if self.time.shape[0] != self.time.shape[1] or self.stoch.shape[0] != self.stoch.shape[1]:
            raise DimensionMismatchError(
                f"Time and stochastic factors must be square, got {self.time.shape} and {self.stoch.shape}"
            )

    @property
    def row_shape(self) -> Tuple[int, int, int]:
        return self.time.shape[0], self.stoch.shape[0], self.space.shape[0]

    @property
    def col_shape(self) -> Tuple[int, int, int]:
        return self.time.shape[1], self.stoch.shape[1], self.space.shape[1]


@dataclass(frozen=True)
class KronSumOperator:
    terms: Tuple[KronTerm, ...]
    row_shape: Tuple[int, int, int]
    col_shape: Tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for term in self.terms:
            if term.row_shape != self.row_shape or term.col_shape != self.col_shape:
                raise DimensionMismatchError(
                    f"Term of shape {term.row_shape}x{term.col_shape} in operator of shape "
                    f"{self.row_shape}x{self.col_shape}"
                )

    @classmethod
    def from_terms(cls, terms: Sequence[KronTerm]) -> "KronSumOperator":
        if not terms:
            raise DimensionMismatchError("Cannot infer shapes of an empty operator")
        return cls(tuple(terms), terms[0].row_shape, terms[0].col_shape)

    @classmethod
    def empty(cls, row_shape: Tuple[int, int, int], col_shape: Tuple[int, int, int]) -> "KronSumOperator":
        return cls((), tuple(row_shape), tuple(col_shape))

    def __len__(self) -> int:
        return len(self.terms)

    def __add__(self, other: "KronSumOperator") -> "KronSumOperator":
        if self.row_shape != other.row_shape or self.col_shape != other.col_shape:
            raise DimensionMismatchError("Operators of different shapes cannot be added")
        return KronSumOperator(self.terms + other.terms, self.row_shape, self.col_shape)

    def scaled(self, s: float) -> "KronSumOperator":
        return KronSumOperator(
            tuple(replace(t, coeff=t.coeff * s) for t in self.terms), self.row_shape, self.col_shape
        )

    def transpose(self) -> "KronSumOperator":
        """Transpose of every factor; shared factor objects stay shared."""
        cache: Dict[int, Matrix] = {}

        def t(x: Matrix) -> Matrix:
            if id(x) not in cache:
                cache[id(x)] = x.T.tocsr() if sp.issparse(x) else np.ascontiguousarray(x.T)
            return cache[id(x)]

        terms = tuple(KronTerm(t(k.time), t(k.stoch), t(k.space), k.coeff) for k in self.terms)
        return KronSumOperator(terms, self.col_shape, self.row_shape)

    def __call__(self, z: TensorTrain3) -> TensorTrain3:
        return kron_apply(self, z)

    def to_sparse(self) -> sp.csr_matrix:
        """Assembled matrix acting on vec(z) with the space index running fastest."""
        rows = int(np.prod(self.row_shape))
        cols = int(np.prod(self.col_shape))
        total = sp.csr_matrix((rows, cols))
        for term in self.terms:
            inner = sp.kron(sp.csr_matrix(term.stoch), sp.csr_matrix(term.space), format="csr")
            total = total + term.coeff * sp.kron(sp.csr_matrix(term.time), inner, format="csr")
        return total.tocsr()


def _time_product(x: Matrix, core1: np.ndarray) -> np.ndarray:
    return np.asarray(x @ core1)


def _stoch_product(x: Matrix, core2: np.ndarray) -> np.ndarray:
    k1, n2, k2 = core2.shape
    flat = core2.transpose(1, 0, 2).reshape(n2, k1 * k2)
    out = np.asarray(x @ flat)
    return out.reshape(-1, k1, k2).transpose(1, 0, 2)


def _space_product(x: Matrix, core3: np.ndarray) -> np.ndarray:
    return np.asarray(x @ core3.T).T


def _group(factors: Sequence[Matrix]) -> Tuple[List[Matrix], List[int]]:
    """Distinct factor objects (by identity) and the group index of each entry."""
    seen: Dict[int, int] = {}
    distinct: List[Matrix] = []
    index: List[int] = []
    for x in factors:
        if id(x) not in seen:
            seen[id(x)] = len(distinct)
            distinct.append(x)
        index.append(seen[id(x)])
    return distinct, index


def kron_apply(op: KronSumOperator, z: TensorTrain3) -> TensorTrain3:
    """Exact product op * z as a tensor train.

    Terms sharing a time factor object share their first-core block and terms sharing a
    space factor object share their last-core block, so the output ranks are
    (#distinct time factors * k1, #distinct space factors * k2). This is at most
    (T * k1, T * k2) for T terms and reaches it only when all factors are distinct objects.
    """
    if op.col_shape != z.shape:
        raise DimensionMismatchError(f"Operator expects mode sizes {op.col_shape}, got {z.shape}")
    if not op.terms:
        return tt_zeros(op.row_shape)

    k1, k2 = z.ranks
    times, time_index = _group([t.time for t in op.terms])
    spaces, space_index = _group([t.space for t in op.terms])

    core1 = np.hstack([_time_product(x, z.core1) for x in times])
    core3 = np.vstack([_space_product(x, z.core3) for x in spaces])
    core2 = np.zeros((len(times) * k1, op.row_shape[1], len(spaces) * k2))
    for term, a, c in zip(op.terms, time_index, space_index):
        core2[a * k1:(a + 1) * k1, :, c * k2:(c + 1) * k2] += term.coeff * _stoch_product(term.stoch, z.core2)
    return TensorTrain3(core1, core2, core3)


def kron_apply_rounded(op: KronSumOperator, z: TensorTrain3, eps: float) -> TensorTrain3:
    return tt_round(kron_apply(op, z), eps)


def kron_apply_accumulate(op: KronSumOperator, z: TensorTrain3, eps: float) -> TensorTrain3:
    """op * z summed one space-factor group at a time, rounding the running sum with eps.

    Keeps intermediate ranks bounded for operators with many distinct space factors.
    """
    if op.col_shape != z.shape:
        raise DimensionMismatchError(f"Operator expects mode sizes {op.col_shape}, got {z.shape}")
    groups: Dict[int, List[KronTerm]] = {}
    for term in op.terms:
        groups.setdefault(id(term.space), []).append(term)
    total = tt_zeros(op.row_shape)
    for terms in groups.values():
        part = kron_apply(KronSumOperator(tuple(terms), op.row_shape, op.col_shape), z)
        total = tt_round(total + part, eps)
    return total


def kron_sandwich(op: KronSumOperator, left: Matrix, right: Matrix) -> KronSumOperator:
    """Replace every space factor X by left @ X @ right."""
    cache: Dict[int, Matrix] = {}
    terms = []
    for term in op.terms:
        if id(term.space) not in cache:
            product = left @ term.space @ right
            cache[id(term.space)] = sp.csr_matrix(product) if sp.issparse(product) else product
        terms.append(replace(term, space=cache[id(term.space)]))
    row_shape = op.row_shape[:2] + (left.shape[0],)
    col_shape = op.col_shape[:2] + (right.shape[1],)
    return KronSumOperator(tuple(terms), row_shape, col_shape)


def apply_spatial(z: TensorTrain3, fn: Callable[[np.ndarray], np.ndarray]) -> TensorTrain3:
    """Map the space core columnwise: fn receives and returns an (n3, k2) block."""
    return TensorTrain3(z.core1, z.core2, np.asarray(fn(z.core3.T)).T)


def apply_time(z: TensorTrain3, fn: Callable[[np.ndarray], np.ndarray]) -> TensorTrain3:
    """Map the time core: fn receives and returns an (n1, k1) block."""
    return TensorTrain3(np.asarray(fn(z.core1)), z.core2, z.core3)


def time_shift(n_t: int) -> sp.csr_matrix:
    """Unit subdiagonal shift moving time slice k to slice k+1."""
    return sp.eye(n_t, k=-1, format="csr")


def build_F(
    spatial: "SpatialDiscretization",
    gpc: "TripleProductMatrices",
    tau: float,
    n_t: int,
    conv: Optional[KronSumOperator] = None,
) -> KronSumOperator:
    """tau^-1 I(x)I(x)M + sum_l I(x)G_l(x)A_l + conv."""
    if gpc.n_xi != gpc.G[0].shape[0] or len(spatial.A) != len(gpc.G):
        raise DimensionMismatchError(
            f"{len(gpc.G)} stochastic matrices but {len(spatial.A)} stiffness matrices"
        )
    eye_t = sp.identity(n_t, format="csr")
    eye_xi = sp.identity(gpc.n_xi, format="csr")
    terms = [KronTerm(eye_t, eye_xi, spatial.M, 1.0 / tau)]
    terms += [KronTerm(eye_t, G_l, A_l) for G_l, A_l in zip(gpc.G, spatial.A)]
    op = KronSumOperator.from_terms(terms)
    if conv is not None and len(conv):
        op = op + conv
    return op


def build_C(tau: float, mass: Matrix, n_t: int, n_xi: int) -> KronSumOperator:
    """-tau^-1 C (x) I (x) M with C the time shift."""
    term = KronTerm(time_shift(n_t), sp.identity(n_xi, format="csr"), mass, -1.0 / tau)
    return KronSumOperator.from_terms([term])


def build_B(n_t: int, n_xi: int, B: Matrix) -> KronSumOperator:
    term = KronTerm(sp.identity(n_t, format="csr"), sp.identity(n_xi, format="csr"), B)
    return KronSumOperator.from_terms([term])


def build_Bt(n_t: int, n_xi: int, B: Matrix) -> KronSumOperator:
    return build_B(n_t, n_xi, B).transpose()


def build_N_from_tt(
    u_tilde: TensorTrain3,
    gpc: "TripleProductMatrices",
    spatial: "SpatialDiscretization",
    columns: str = "free",
) -> KronSumOperator:
    """Stochastic Galerkin convection operator of a full velocity field in TT format.

    Args:
        u_tilde: Convecting field over all velocity nodes, shape (n_t, n_xi, 2 * n_nodes)
        gpc: Triple product matrices; H_l weights the l-th chaos mode of the field
        spatial: Discretization providing the scalar convection assembly
        columns: "free" for the free-free block, "all" to act on full velocity fields

    Returns:
        Operator with k1 * k2 terms diag(u1_a) (x) sum_l u2(a, l, b) H_l (x) N(u3_b)
    """
    if u_tilde.shape[1] != gpc.n_xi:
        raise DimensionMismatchError(f"Field has {u_tilde.shape[1]} chaos modes, basis has {gpc.n_xi}")
    k1, k2 = u_tilde.ranks
    times = [sp.diags(u_tilde.core1[:, a]).tocsr() for a in range(k1)]
    spaces = [spatial.convection(u_tilde.core3[b], columns=columns) for b in range(k2)]
    H = np.stack([h.toarray() for h in gpc.H])
    middles = np.einsum("alb,lrs->abrs", u_tilde.core2, H)

    terms = [KronTerm(times[a], middles[a, b], spaces[b]) for a in range(k1) for b in range(k2)]
    return KronSumOperator.from_terms(terms)


def mean_convection_factors(
    w: TensorTrain3, eps_conv: float
) -> Tuple[List[Tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Low-rank split of the mean (first chaos mode) of a convecting field.

    Returns:
        Pairs (time weights, spatial field) whose outer products sum to the mean slice
        within eps_conv, and the time average of the mean slice.
    """
    mean = w.stochastic_slice(0)
    w_avg = mean.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        return [], w_avg
    u, s, vt = np.linalg.svd(mean, full_matrices=False)
    tail = np.sqrt(np.cumsum(s[::-1] ** 2)[::-1])
    keep = int(np.count_nonzero(tail > eps_conv * norm))
    keep = max(keep, 1)
    return [(u[:, r] * s[r], vt[r]) for r in range(keep)], w_avg


def build_F0C(
    spatial: "SpatialDiscretization",
    tau: float,
    n_t: int,
    n_xi: int,
    mean_factors: Sequence[Tuple[np.ndarray, np.ndarray]],
) -> KronSumOperator:
    """Mean operator tau^-1 (I - C) (x) I (x) M + I (x) I (x) A_0 + sum diag(c_r) (x) I (x) N(w_r)."""
    eye_t = sp.identity(n_t, format="csr")
    eye_xi = sp.identity(n_xi, format="csr")
    stepping = (eye_t - time_shift(n_t)).tocsr()
    terms = [KronTerm(stepping, eye_xi, spatial.M, 1.0 / tau), KronTerm(eye_t, eye_xi, spatial.A[0])]
    for weights, field_values in mean_factors:
        terms.append(KronTerm(sp.diags(weights).tocsr(), eye_xi, spatial.convection(field_values)))
    return KronSumOperator.from_terms(terms)


def build_Fp0Cp(
    spatial: "SpatialDiscretization",
    tau: float,
    n_t: int,
    n_xi: int,
    mean_factors: Sequence[Tuple[np.ndarray, np.ndarray]],
) -> KronSumOperator:
    """Pressure-space analogue of build_F0C for the PCD Schur approximation."""
    eye_t = sp.identity(n_t, format="csr")
    eye_xi = sp.identity(n_xi, format="csr")
    stepping = (eye_t - time_shift(n_t)).tocsr()
    terms = [KronTerm(stepping, eye_xi, spatial.M_p, 1.0 / tau), KronTerm(eye_t, eye_xi, spatial.A_p)]
    for weights, field_values in mean_factors:
        terms.append(KronTerm(sp.diags(weights).tocsr(), eye_xi, spatial.pressure_convection(field_values)))
    return KronSumOperator.from_terms(terms)
