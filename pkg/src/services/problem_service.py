import time
from dataclasses import dataclass

from src.config import ExperimentConfig
from src.discretization.fem import (
    InflowProfile,
    SpatialDiscretization,
    TaylorHoodAssembler,
    assemble_matrices,
    assemble_rhs_allatonce,
    lifting_tt,
)
from src.discretization.mesh import StructuredMesh, build_mesh
from src.discretization.stochastic_basis import (
    KLViscosity,
    TripleProductMatrices,
    build_basis,
    build_kl_viscosity,
    check_positivity,
    triple_products,
    viscosity_fields,
)
from src.solvers.picard import AllAtOnceProblem
from src.utils.errors import ConfigurationError
from src.utils.logger import setup_logger
from src.utils.validators import ConfigValidator

logger = setup_logger('problem_service')


@dataclass
class ProblemSetup:
    """Everything assembled for one experiment before the Picard loop starts."""

    config: ExperimentConfig
    mesh: StructuredMesh
    kl: KLViscosity
    gpc: TripleProductMatrices
    spatial: SpatialDiscretization
    inflow: InflowProfile
    problem: AllAtOnceProblem
    min_viscosity: float
    setup_time: float

    @property
    def total_dofs(self) -> int:
        return self.problem.n_t * self.problem.n_xi * (self.spatial.n_u + self.spatial.n_p)

    def dimensions_line(self) -> str:
        return (
            f"n_t={self.problem.n_t}, n_ξ={self.problem.n_xi}, n_u={self.spatial.n_u}, "
            f"n_p={self.spatial.n_p}, total={self.total_dofs}"
        )


class ProblemService:
    """Builds the discrete all-at-once problem of an experiment configuration."""

    @staticmethod
    def build(config: ExperimentConfig) -> ProblemSetup:
        """Mesh, random viscosity, chaos basis, spatial matrices and right-hand sides.

        Args:
            config: Validated experiment configuration

        Returns:
            ProblemSetup

        Raises:
            ConfigurationError: if the configuration fails validation or the sampled
                viscosity is not positive
        """
        error = ConfigValidator.validate_experiment(config)
        if error:
            raise ConfigurationError(error)

        start = time.perf_counter()
        mesh = build_mesh(config.domain, config.h)

        # The random viscosity lives on the Q1 nodes and is weighted by the Q1 mass matrix
        pressure_mass = TaylorHoodAssembler(mesh).pressure_mass()
        kl = build_kl_viscosity(config.nu0, config.sigma, config.b, config.m, mesh.pnodes, pressure_mass)
        fields = viscosity_fields(kl)
        min_viscosity = check_positivity(fields, n_samples=config.n_mc_samples, seed=config.seed)

        gpc = triple_products(build_basis(config.m, config.d_psi))
        spatial = assemble_matrices(mesh, fields)
        inflow = InflowProfile.for_mesh(mesh)

        n_t = config.n_t
        f_u, f_p = assemble_rhs_allatonce(spatial, inflow, n_t, config.tau, gpc)
        problem = AllAtOnceProblem(
            spatial=spatial,
            gpc=gpc,
            tau=config.tau,
            n_t=n_t,
            lifting=lifting_tt(spatial, inflow, n_t, config.tau, gpc.n_xi),
            f_u=f_u,
            f_p=f_p,
        )
        setup = ProblemSetup(
            config=config,
            mesh=mesh,
            kl=kl,
            gpc=gpc,
            spatial=spatial,
            inflow=inflow,
            problem=problem,
            min_viscosity=min_viscosity,
            setup_time=time.perf_counter() - start,
        )
        logger.info(f"Problem dimensions: {setup.dimensions_line()}")
        logger.info(
            f"Setup finished in {setup.setup_time:.2f}s (domain={config.domain}, h={config.h}, "
            f"sigma={config.sigma}, min sampled viscosity {min_viscosity:.3e})"
        )
        return setup
