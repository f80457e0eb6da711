"""P1 saddle-point finite elements for sphere-valued heat flows (harmonic map heat flow and LLG)."""
from .mesh import Mesh, build_structured_2d, build_structured_3d, check_h5, load_mesh
from .assembly import (Operators, assemble_lumped_mass, assemble_mass, assemble_stiffness,
                       dirichlet_energy, inner_h, l2_project, nodal_interpolate, normalize_nodal)
from .linsolve import SaddleSystem, SolverError, solve_saddle, solve_spd
from .schemes import (ModelParams, SchemeOperators, StepReport, StepState, cn_step, euler_step,
                      prepare_initial, recover_multiplier, run_simulation)
from .analysis import (SingularIC, SmoothTestProblem, barrier_scan, convergence_rates,
                       error_norms_q, error_norms_u, negnorm_q, rho_estimator)

__version__ = "0.1.0"

__all__ = [
    "Mesh",
    "build_structured_2d",
    "build_structured_3d",
    "check_h5",
    "load_mesh",
    "Operators",
    "assemble_lumped_mass",
    "assemble_mass",
    "assemble_stiffness",
    "dirichlet_energy",
    "inner_h",
    "l2_project",
    "nodal_interpolate",
    "normalize_nodal",
    "SaddleSystem",
    "SolverError",
    "solve_saddle",
    "solve_spd",
    "ModelParams",
    "SchemeOperators",
    "StepReport",
    "StepState",
    "cn_step",
    "euler_step",
    "prepare_initial",
    "recover_multiplier",
    "run_simulation",
    "SingularIC",
    "SmoothTestProblem",
    "barrier_scan",
    "convergence_rates",
    "error_norms_q",
    "error_norms_u",
    "negnorm_q",
    "rho_estimator",
]
