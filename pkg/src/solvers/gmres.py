"""Flexible GMRES on tensor-train vectors with truncation of every stored vector."""
import time
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional

import numpy as np

from src.utils.logger import setup_logger

logger = setup_logger('lr_gmres')

# Vectors only need +, -, scalar *, dot, norm, round and max_rank
Vector = Any
LinearMap = Callable[[Vector], Vector]

BREAKDOWN_TOL = 1e-14


@dataclass
class GmresResult:
    solution: Vector
    converged: bool
    iterations: int
    history: List[float] = field(default_factory=list)  # relative residual norms, entry 0 is the start
    breakdown: bool = False
    update_time: float = 0.0  # seconds spent forming z_k and s_k
    max_rank: int = 0

    @property
    def relative_residual(self) -> float:
        return self.history[-1] if self.history else 0.0


def lr_gmres(
    L: LinearMap,
    b: Vector,
    P: Optional[LinearMap] = None,
    tol: float = 1e-1,
    eps: float = 1e-3,
    maxit: int = 100,
    x0: Optional[Vector] = None,
    name: str = "gmres",
) -> GmresResult:
    """Right-preconditioned flexible GMRES without restarts.

    Truncation with eps is applied to the initial residual, to L times each preconditioned
    Arnoldi vector, to each new Arnoldi vector, and to the iterate and its residual after
    every step. The residual of the iterate is recomputed from L, never from the recurrence.

    Args:
        L: Operator
        b: Right-hand side
        P: Preconditioner application (may itself be an iterative solve); identity if None
        tol: Stop when ||s_k|| <= tol * ||b||
        eps: Relative truncation tolerance
        maxit: Maximum number of iterations
        x0: Initial guess (zero if None)
        name: Label used in log messages

    Returns:
        GmresResult; on failure the iterate with the smallest residual is returned
    """
    if P is None:
        P = lambda v: v
    b_norm = b.norm()
    zero = (b * 0.0).round(0.0)
    if b_norm == 0.0:
        return GmresResult(solution=zero, converged=True, iterations=0, history=[0.0])

    z0 = x0
    s = (b - L(z0)).round(eps) if z0 is not None else b.round(eps)
    beta = s.norm()
    history = [beta / b_norm]
    max_rank = s.max_rank
    if beta == 0.0:
        return GmresResult(solution=z0, converged=True, iterations=0, history=history, max_rank=max_rank)

    V = [s * (1.0 / beta)]
    Z: List[Vector] = []
    H = np.zeros((maxit + 1, maxit))
    best_z = z0 if z0 is not None else zero
    best_res = history[0]
    z = best_z
    breakdown = False
    update_time = 0.0
    k = 0

    while history[-1] > tol and k < maxit:
        k += 1
        z_hat = P(V[k - 1])
        Z.append(z_hat)
        x = L(z_hat).round(eps)
        x_norm = x.norm()
        for i in range(k):
            H[i, k - 1] = x.dot(V[i])
            x = x - V[i] * H[i, k - 1]
        H[k, k - 1] = x.norm()
        breakdown = H[k, k - 1] <= BREAKDOWN_TOL * x_norm
        if not breakdown:
            V.append((x * (1.0 / H[k, k - 1])).round(eps))

        rhs = np.zeros(k + 1)
        rhs[0] = beta
        y = np.linalg.lstsq(H[: k + 1, :k], rhs, rcond=None)[0]

        start = time.perf_counter()
        update = Z[0] * y[0]
        for i in range(1, k):
            update = update + Z[i] * y[i]
        z = (z0 + update).round(eps) if z0 is not None else update.round(eps)
        s = (b - L(z)).round(eps)
        update_time += time.perf_counter() - start

        history.append(s.norm() / b_norm)
        max_rank = max(max_rank, x.max_rank, z.max_rank, s.max_rank, z_hat.max_rank)
        logger.debug(f"{name} iteration {k}: relative residual {history[-1]:.3e}, max rank {max_rank}")
        if history[-1] < best_res:
            best_res, best_z = history[-1], z
        if breakdown:
            logger.debug(f"{name} happy breakdown at iteration {k}")
            break

    converged = history[-1] <= tol
    if not converged:
        logger.warning(f"{name} stopped after {k} iterations at relative residual {history[-1]:.3e} (tol {tol:.1e})")
        z = best_z
    return GmresResult(
        solution=z,
        converged=converged,
        iterations=k,
        history=history,
        breakdown=breakdown,
        update_time=update_time,
        max_rank=max_rank,
    )
