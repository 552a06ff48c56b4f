"""Result records of a solve and their tabular forms."""
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

# Bump when a column is renamed, removed or changes meaning
CSV_SCHEMA_VERSION = 1

Ranks = Tuple[int, int]


class PicardStep(BaseModel):
    """One Picard step; step 0 is the Stokes solve that produces the initial iterate."""

    model_config = ConfigDict(frozen=True)

    step: int
    residual: float
    relative_residual: float
    divergence_residual: float
    gmres_iterations: int
    gmres_converged: bool
    gmres_history: List[float] = Field(default_factory=list)
    update_time: float = 0.0
    du_ranks: Ranks
    dp_ranks: Ranks
    u_ranks: Ranks
    p_ranks: Ranks
    u_tilde_ranks: Ranks
    elapsed: float


class PicardReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    steps: List[PicardStep]
    converged: bool
    rhs_norm: float
    solve_time: float

    @property
    def picard_steps(self) -> int:
        """Number of Picard corrections after the Stokes solve."""
        return max(len(self.steps) - 1, 0)

    @property
    def total_gmres_iterations(self) -> int:
        return sum(s.gmres_iterations for s in self.steps)

    @property
    def final_relative_residual(self) -> float:
        return self.steps[-1].relative_residual if self.steps else 0.0

    @property
    def final_ranks(self) -> Dict[str, Ranks]:
        if not self.steps:
            return {"u": (1, 1), "p": (1, 1)}
        last = self.steps[-1]
        return {"u": last.u_ranks, "p": last.p_ranks}

    def to_frame(self) -> pd.DataFrame:
        """Per-step residuals, iteration counts and times."""
        rows = [
            {
                "schema_version": CSV_SCHEMA_VERSION,
                "step": s.step,
                "residual": s.residual,
                "relative_residual": s.relative_residual,
                "divergence_residual": s.divergence_residual,
                "gmres_iterations": s.gmres_iterations,
                "gmres_converged": s.gmres_converged,
                "gmres_final_residual": s.gmres_history[-1] if s.gmres_history else np.nan,
                "update_time": s.update_time,
                "elapsed": s.elapsed,
            }
            for s in self.steps
        ]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def ranks_frame(self) -> pd.DataFrame:
        rows = []
        for s in self.steps:
            row = {"schema_version": CSV_SCHEMA_VERSION, "step": s.step}
            for name in ("du", "dp", "u", "p", "u_tilde"):
                kappa1, kappa2 = getattr(s, f"{name}_ranks")
                row[f"{name}_kappa1"] = kappa1
                row[f"{name}_kappa2"] = kappa2
            rows.append(row)
        return pd.DataFrame(rows, columns=RANKS_COLUMNS)


REPORT_COLUMNS = [
    "schema_version", "step", "residual", "relative_residual", "divergence_residual",
    "gmres_iterations", "gmres_converged", "gmres_final_residual", "update_time", "elapsed",
]
RANKS_COLUMNS = ["schema_version", "step"] + [
    f"{name}_{k}" for name in ("du", "dp", "u", "p", "u_tilde") for k in ("kappa1", "kappa2")
]


class SolutionStatistics(BaseModel):
    """Mean and variance fields of the converged solution at selected times."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: List[float]
    velocity_nodes: np.ndarray  # (n_nodes, 2)
    pressure_nodes: np.ndarray  # (n_pnodes, 2)
    u_mean: List[np.ndarray]  # per time, (2 * n_nodes,) including the lifting
    u_variance: List[np.ndarray]
    p_mean: List[np.ndarray]  # per time, (n_pnodes,)
    p_variance: List[np.ndarray]
    storage_ratio_u: float
    storage_ratio_p: float
    divergence_residual: float

    @property
    def max_variance(self) -> float:
        values = [float(v.max()) for v in self.u_variance + self.p_variance if v.size]
        return max(values) if values else 0.0

    def to_frame(self) -> pd.DataFrame:
        """Long format: one row per (time, field, statistic, node)."""
        n = self.velocity_nodes.shape[0]
        frames = []
        for i, t in enumerate(self.times):
            blocks = [
                ("u1", "mean", self.u_mean[i][:n], self.velocity_nodes),
                ("u2", "mean", self.u_mean[i][n:], self.velocity_nodes),
                ("u1", "variance", self.u_variance[i][:n], self.velocity_nodes),
                ("u2", "variance", self.u_variance[i][n:], self.velocity_nodes),
                ("p", "mean", self.p_mean[i], self.pressure_nodes),
                ("p", "variance", self.p_variance[i], self.pressure_nodes),
            ]
            for field_name, statistic, values, nodes in blocks:
                frames.append(
                    pd.DataFrame(
                        {
                            "schema_version": CSV_SCHEMA_VERSION,
                            "time": t,
                            "field": field_name,
                            "statistic": statistic,
                            "node": np.arange(len(values)),
                            "x1": nodes[:, 0],
                            "x2": nodes[:, 1],
                            "value": values,
                        }
                    )
                )
        if not frames:
            return pd.DataFrame(columns=STATS_COLUMNS)
        return pd.concat(frames, ignore_index=True)


STATS_COLUMNS = ["schema_version", "time", "field", "statistic", "node", "x1", "x2", "value"]


class OracleReport(BaseModel):
    """Pairwise relative discrepancies between three independent solves of one instance."""

    model_config = ConfigDict(frozen=True)

    total_dofs: int
    dense_vs_sequential: float
    lowrank_vs_dense: float
    lowrank_vs_sequential: float
    dense_picard_steps: int
    dense_converged: bool
    sequential_converged: bool
    lowrank_converged: bool
    lowrank_ranks: Optional[Ranks] = None

    @property
    def max_discrepancy(self) -> float:
        return max(self.dense_vs_sequential, self.lowrank_vs_dense, self.lowrank_vs_sequential)

    def to_frame(self) -> pd.DataFrame:
        row = self.model_dump()
        kappa = row.pop("lowrank_ranks") or (None, None)
        row["lowrank_kappa1"], row["lowrank_kappa2"] = kappa
        return pd.DataFrame([{"schema_version": CSV_SCHEMA_VERSION, **row}])
