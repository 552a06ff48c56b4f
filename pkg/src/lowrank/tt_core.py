"""Three-mode tensor trains (time x stochastic x space).

A tensor t of shape (n1, n2, n3) is stored as

    t[i1, i2, i3] = sum_{a1, a2} core1[i1, a1] * core2[a1, i2, a2] * core3[a2, i3]

and vectorized with i3 running fastest, so vec(t) matches np.kron(x1, np.kron(x2, x3)).
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from src.config import get_settings
from src.utils.errors import DimensionMismatchError, SizeCapError

TT_MAGIC = b"TT3\0"

# Singular values whose tail is below this fraction of the unfolding norm count as zero
ROUNDOFF = 1e-14


@dataclass(frozen=True)
class TensorTrain3:
    core1: np.ndarray  # (n1, k1)
    core2: np.ndarray  # (k1, n2, k2)
    core3: np.ndarray  # (k2, n3)

    def __post_init__(self):
        core1 = np.asarray(self.core1, dtype=float)
        core2 = np.asarray(self.core2, dtype=float)
        core3 = np.asarray(self.core3, dtype=float)
        if core1.ndim != 2 or core2.ndim != 3 or core3.ndim != 2:
            raise DimensionMismatchError(
                f"Cores must be 2-, 3- and 2-dimensional, got {core1.ndim}, {core2.ndim}, {core3.ndim}"
            )
        if core1.shape[1] != core2.shape[0] or core2.shape[2] != core3.shape[0]:
            raise DimensionMismatchError(
                f"Inconsistent ranks: {core1.shape}, {core2.shape}, {core3.shape}"
            )
        if min(core1.shape + core2.shape + core3.shape) < 1:
            raise DimensionMismatchError("Mode sizes and ranks must be at least 1")
        object.__setattr__(self, "core1", core1)
        object.__setattr__(self, "core2", core2)
        object.__setattr__(self, "core3", core3)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.core1.shape[0], self.core2.shape[1], self.core3.shape[1]

    @property
    def ranks(self) -> Tuple[int, int]:
        return self.core1.shape[1], self.core3.shape[0]

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    @property
    def storage(self) -> int:
        return tt_storage(self)

    def full(self, cap: Optional[int] = None) -> np.ndarray:
        return tt_to_full(self, cap)

    def round(self, eps: float) -> "TensorTrain3":
        return tt_round(self, eps)

    def dot(self, other: "TensorTrain3") -> float:
        return tt_dot(self, other)

    def norm(self) -> float:
        return tt_norm(self)

    def time_slice(self, k: int) -> np.ndarray:
        """Coefficients of time step k as an (n2, n3) matrix."""
        return np.einsum("a,ajb,bk->jk", self.core1[k], self.core2, self.core3)

    def stochastic_slice(self, j: int) -> np.ndarray:
        """Coefficients of basis function j as an (n1, n3) matrix."""
        return self.core1 @ self.core2[:, j, :] @ self.core3

    def __add__(self, other: "TensorTrain3") -> "TensorTrain3":
        return tt_add(self, other)

    def __sub__(self, other: "TensorTrain3") -> "TensorTrain3":
        return tt_add(self, tt_scale(other, -1.0))

    def __neg__(self) -> "TensorTrain3":
        return tt_scale(self, -1.0)

    def __mul__(self, s: float) -> "TensorTrain3":
        return tt_scale(self, s)

    __rmul__ = __mul__


def _check_cap(shape: Tuple[int, ...], cap: Optional[int]) -> None:
    if cap is None:
        cap = get_settings().FULL_TENSOR_CAP
    size = int(np.prod(shape))
    if size > cap:
        raise SizeCapError(f"Dense tensor of shape {shape} has {size} entries, above the cap of {cap}")


def _check_same_shape(a: TensorTrain3, b: TensorTrain3) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"Mode sizes differ: {a.shape} vs {b.shape}")


def truncation_rank(s: np.ndarray, delta: float) -> int:
    """Smallest rank whose discarded singular value tail has norm <= delta.

    Values equal to the last retained one are kept as well. A tail below
    ROUNDOFF times the norm of s is dropped even when delta is 0.
    """
    delta = max(delta, ROUNDOFF * float(np.linalg.norm(s)))
    tail = np.sqrt(np.cumsum(s[::-1] ** 2)[::-1])
    tail = np.append(tail, 0.0)
    r = int(np.nonzero(tail[1:] <= delta)[0][0]) + 1
    while r < len(s) and s[r - 1] > 0 and s[r] >= s[r - 1] * (1.0 - 1e-14):
        r += 1
    return r


def tt_zeros(shape: Tuple[int, int, int]) -> TensorTrain3:
    n1, n2, n3 = shape
    return TensorTrain3(np.zeros((n1, 1)), np.zeros((1, n2, 1)), np.zeros((1, n3)))


def tt_rank1(x1: np.ndarray, x2: np.ndarray, x3: np.ndarray) -> TensorTrain3:
    """The outer product x1 (x) x2 (x) x3."""
    x1, x2, x3 = (np.asarray(x, dtype=float).ravel() for x in (x1, x2, x3))
    return TensorTrain3(x1[:, None], x2[None, :, None], x3[None, :])


def tt_random(
    shape: Tuple[int, int, int], ranks: Tuple[int, int], rng: Union[int, np.random.Generator, None] = None
) -> TensorTrain3:
    """Tensor train with standard normal cores."""
    rng = np.random.default_rng(rng)
    n1, n2, n3 = shape
    k1, k2 = ranks
    return TensorTrain3(
        rng.standard_normal((n1, k1)), rng.standard_normal((k1, n2, k2)), rng.standard_normal((k2, n3))
    )


def tt_from_full(t: np.ndarray, eps: float, cap: Optional[int] = None) -> TensorTrain3:
    """TT-SVD of a dense three-mode tensor.

    Args:
        t: Dense array of shape (n1, n2, n3)
        eps: Relative Frobenius tolerance; each of the two splits gets eps*||t||/sqrt(2)
        cap: Maximum number of dense entries (defaults to Settings.FULL_TENSOR_CAP)

    Returns:
        TensorTrain3 with ||t - result|| <= eps*||t||
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 3:
        raise DimensionMismatchError(f"Expected a three-mode array, got {t.ndim} modes")
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    _check_cap(t.shape, cap)

    n1, n2, n3 = t.shape
    norm = np.linalg.norm(t)
    if norm == 0.0:
        return tt_zeros(t.shape)
    delta = eps * norm / np.sqrt(2.0)

    u, s, vt = np.linalg.svd(t.reshape(n1, n2 * n3), full_matrices=False)
    r1 = truncation_rank(s, delta)
    core1 = u[:, :r1]
    rest = (s[:r1, None] * vt[:r1]).reshape(r1 * n2, n3)

    u, s, vt = np.linalg.svd(rest, full_matrices=False)
    r2 = truncation_rank(s, delta)
    core2 = u[:, :r2].reshape(r1, n2, r2)
    core3 = s[:r2, None] * vt[:r2]
    return TensorTrain3(core1, core2, core3)


def tt_to_full(z: TensorTrain3, cap: Optional[int] = None) -> np.ndarray:
    _check_cap(z.shape, cap)
    return np.einsum("ia,ajb,bk->ijk", z.core1, z.core2, z.core3)


def _left_orthogonalize(z: TensorTrain3) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """QR sweep leaving the whole norm in the last core."""
    n1, n2, n3 = z.shape
    q1, r = np.linalg.qr(z.core1)
    c2 = np.einsum("ab,bjc->ajc", r, z.core2)
    k1 = c2.shape[0]
    q2, r = np.linalg.qr(c2.reshape(k1 * n2, -1))
    c3 = r @ z.core3
    return q1, q2, c3


def tt_round(z: TensorTrain3, eps: float) -> TensorTrain3:
    """Recompress z to relative accuracy eps.

    Left-to-right QR followed by right-to-left truncated SVDs on the cores.
    """
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    n1, n2, n3 = z.shape
    q1, q2, c3 = _left_orthogonalize(z)
    norm = np.linalg.norm(c3)
    if norm == 0.0:
        return tt_zeros(z.shape)
    delta = eps * norm / np.sqrt(2.0)

    u, s, vt = np.linalg.svd(c3, full_matrices=False)
    r2 = truncation_rank(s, delta)
    core3 = vt[:r2]
    c2 = q2 @ (u[:, :r2] * s[:r2])
    k1 = q1.shape[1]

    u, s, vt = np.linalg.svd(c2.reshape(k1, n2 * r2), full_matrices=False)
    r1 = truncation_rank(s, delta)
    core2 = vt[:r1].reshape(r1, n2, r2)
    core1 = q1 @ (u[:, :r1] * s[:r1])
    return TensorTrain3(core1, core2, core3)


def tt_add(a: TensorTrain3, b: TensorTrain3) -> TensorTrain3:
    """Exact sum; ranks add up."""
    _check_same_shape(a, b)
    ka1, ka2 = a.ranks
    kb1, kb2 = b.ranks
    n2 = a.shape[1]
    core2 = np.zeros((ka1 + kb1, n2, ka2 + kb2))
    core2[:ka1, :, :ka2] = a.core2
    core2[ka1:, :, ka2:] = b.core2
    return TensorTrain3(
        np.hstack([a.core1, b.core1]), core2, np.vstack([a.core3, b.core3])
    )


def tt_scale(a: TensorTrain3, s: float) -> TensorTrain3:
    return TensorTrain3(a.core1 * s, a.core2, a.core3)


def tt_dot(a: TensorTrain3, b: TensorTrain3) -> float:
    """Frobenius inner product through Gram matrices of the cores."""
    _check_same_shape(a, b)
    gram = a.core1.T @ b.core1
    gram = np.einsum("ab,ajc,bjd->cd", gram, a.core2, b.core2)
    return float(np.einsum("cd,ck,dk->", gram, a.core3, b.core3))


def tt_norm(z: TensorTrain3) -> float:
    _, _, c3 = _left_orthogonalize(z)
    return float(np.linalg.norm(c3))


def tt_storage(z: TensorTrain3) -> int:
    """Number of stored core entries n1*k1 + k1*n2*k2 + k2*n3."""
    return z.core1.size + z.core2.size + z.core3.size


def storage_ratio(shape: Tuple[int, int, int], ranks: Tuple[int, int]) -> float:
    """Core storage relative to the dense tensor for the given ranks."""
    n1, n2, n3 = shape
    k1, k2 = ranks
    return (n1 * k1 + n2 * k1 * k2 + n3 * k2) / (n1 * n2 * n3)


def tt_save(z: TensorTrain3, path: Union[str, Path]) -> None:
    """Write the binary dump: magic, (n1, n2, n3, k1, k2) as <i8, then cores as <f8."""
    header = np.array(z.shape + z.ranks, dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(TT_MAGIC)
        fh.write(header.tobytes())
        for core in (z.core1, z.core2, z.core3):
            fh.write(np.ascontiguousarray(core, dtype="<f8").tobytes(order="C"))


def tt_load(path: Union[str, Path]) -> TensorTrain3:
    data = Path(path).read_bytes()
    if data[:4] != TT_MAGIC:
        raise ValueError(f"{path} is not a TT3 dump")
    n1, n2, n3, k1, k2 = (int(v) for v in np.frombuffer(data, dtype="<i8", count=5, offset=4))
    offset = 4 + 5 * 8
    cores = []
    for shape in ((n1, k1), (k1, n2, k2), (k2, n3)):
        count = int(np.prod(shape))
        cores.append(np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy())
        offset += 8 * count
    if offset != len(data):
        raise ValueError(f"{path} has {len(data) - offset} trailing bytes")
    return TensorTrain3(*cores)
