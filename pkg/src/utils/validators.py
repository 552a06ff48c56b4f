from pathlib import Path
from typing import Iterable, Optional

from src.config import ExperimentConfig

# Segment lengths that every mesh size must divide, per domain
DOMAIN_SEGMENTS = {
    "step": (1.0, 0.5, 12.0, 2.0),
    "channel": (1.0,),
}

SWEEP_PARAMETERS = ("sigma", "nu0", "h", "tau", "tol_gmres")


class ConfigValidator:
    @staticmethod
    def validate_mesh_size(domain: str, h: float) -> Optional[str]:
        """Check that h tiles every straight segment of the domain boundary."""
        if domain not in DOMAIN_SEGMENTS:
            return f"Unknown domain kind: {domain}"
        if h <= 0:
            return f"Mesh size must be positive, got {h}"
        for length in DOMAIN_SEGMENTS[domain]:
            count = length / h
            if abs(count - round(count)) > 1e-9 or round(count) < 1:
                return f"h={h} does not divide segment length {length} of the {domain} domain"
        return None

    @staticmethod
    def validate_dense_size(total_dofs: int, cap: int) -> Optional[str]:
        """Check that an explicit all-at-once system stays under the dense cap."""
        if total_dofs > cap:
            return f"All-at-once system has {total_dofs} unknowns, above the cap of {cap}"
        return None

    @staticmethod
    def validate_output_dir(path: str) -> Optional[str]:
        target = Path(path)
        if target.exists() and not target.is_dir():
            return f"Output path exists and is not a directory: {path}"
        return None

    @staticmethod
    def validate_sweep(parameter: str, values: Iterable[float]) -> Optional[str]:
        values = list(values)
        if parameter not in SWEEP_PARAMETERS:
            return f"Cannot sweep over '{parameter}'; choose one of {', '.join(SWEEP_PARAMETERS)}"
        if not values:
            return "Sweep needs at least one value"
        return None

    @staticmethod
    def validate_experiment(config: ExperimentConfig) -> Optional[str]:
        """Run every check that does not need assembled matrices."""
        error = ConfigValidator.validate_mesh_size(config.domain, config.h)
        if error:
            return error
        if config.m == 0 and config.sigma > 0:
            return "sigma > 0 needs at least one random variable (m >= 1)"
        return ConfigValidator.validate_output_dir(config.output_dir)
