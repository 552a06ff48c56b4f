"""Velocity and pressure tensor-train pairs used as one vector by the Krylov solver."""
from dataclasses import dataclass
from typing import Tuple

from src.lowrank.tt_core import TensorTrain3, tt_zeros


@dataclass(frozen=True)
class BlockTT:
    """Velocity and pressure tensor trains treated as one stacked vector.

    Rounding acts on the two blocks separately; inner products and norms add up blockwise.
    """

    u: TensorTrain3
    p: TensorTrain3

    @classmethod
    def zeros_like(cls, other: "BlockTT") -> "BlockTT":
        return cls(tt_zeros(other.u.shape), tt_zeros(other.p.shape))

    @property
    def ranks(self) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        return self.u.ranks, self.p.ranks

    @property
    def max_rank(self) -> int:
        return max(self.u.ranks + self.p.ranks)

    def round(self, eps: float) -> "BlockTT":
        return BlockTT(self.u.round(eps), self.p.round(eps))

    def dot(self, other: "BlockTT") -> float:
        return self.u.dot(other.u) + self.p.dot(other.p)

    def norm(self) -> float:
        return float((self.u.norm() ** 2 + self.p.norm() ** 2) ** 0.5)

    def __add__(self, other: "BlockTT") -> "BlockTT":
        return BlockTT(self.u + other.u, self.p + other.p)

    def __sub__(self, other: "BlockTT") -> "BlockTT":
        return BlockTT(self.u - other.u, self.p - other.p)

    def __neg__(self) -> "BlockTT":
        return BlockTT(-self.u, -self.p)

    def __mul__(self, s: float) -> "BlockTT":
        return BlockTT(self.u * s, self.p * s)

    __rmul__ = __mul__
