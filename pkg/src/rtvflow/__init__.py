"""Implicit P1 finite-element solver for the regularized total variation flow

    dt u = div( grad u / sqrt(eps^2 + |grad u|^2) ) - lam (u - g)

on a polygonal domain with zero-flux boundary, plus the nonlinear
projection operator and manufactured-solution convergence tooling that
go with it.
"""

from .analysis import (
    ManufacturedSolution,
    ConvergenceRow,
    consistency_residual,
    convergence_study,
    cosine_solution,
    error_E1,
    error_E2,
    observed_orders,
    run_manufactured,
)
from .assembly import (
    QuadratureRule,
    StepData,
    assemble_load,
    assemble_mass,
    assemble_step_jacobian,
    assemble_step_residual,
    flux,
    flux_jacobian,
    triangle_rule,
)
from .discretisation import (
    DiscreteField,
    Discretisation,
    P1Discretisation,
    conformity_defect,
    consistency_defect,
)
from .kernels import BACKEND
from .mesh import (
    MeshFormatError,
    MeshGeometryError,
    MeshTopologyError,
    QuasiUniformityReport,
    TriMesh,
    generate_structured,
    load_mesh,
    quasi_uniformity,
    save_mesh,
)
from .projection import (
    ProjectionDiagnostics,
    ProjectionProblem,
    ProjectionStats,
    project,
    projection_diagnostics,
)
from .solver import (
    LinearSolveError,
    NewtonConfig,
    NonconvergenceError,
    ProblemData,
    SchemeParams,
    SolveReport,
    StepResult,
    newton_solve_step,
    run_time_loop,
    step_energy,
    uniform_grid,
)

__version__ = "0.1.0"
