"""First Robin eigenvalue of the anisotropic (Finsler) Laplacian on planar domains.

P1 finite elements for the energy ``int F^2(grad u)``, Rayleigh-quotient solvers for
the Robin, Dirichlet, Neumann and constrained eigenvalues and the harmonic-trace
quotient ``q``, and a harness that checks the inequalities linking them.
"""
from .errors import ConvergenceError, InvalidInputError, NormDomainError
from .norms import NormSpec, norm_eval, norm_grad, norm_hess_F2
from .geometry import (BoundaryWeight, Mesh, anisotropic_perimeter, area, boundary_mass,
                       generate_mesh, read_mesh, write_mesh)
from .fem import (AssembledForms, FemField, assemble_forms, energy, energy_gradient,
                  harmonic_extension, projection_constant, solve_dirichlet_matching)
from .eigensolvers import (EigenResult, SolverOptions, lambda_dirichlet, lambda_robin,
                           mu_neumann, q_plain, q_value, sigma, solver_core)
from .harness import (BetaSpec, CaseSpec, VerificationReport, beta_sweep, decomposition_check,
                      run_matrix, verify_theorem)

__version__ = "0.1.0"

__all__ = [
    "AssembledForms", "BetaSpec", "BoundaryWeight", "CaseSpec", "ConvergenceError", "EigenResult",
    "FemField", "InvalidInputError", "Mesh", "NormDomainError", "NormSpec", "SolverOptions",
    "VerificationReport", "anisotropic_perimeter", "area", "assemble_forms", "beta_sweep",
    "boundary_mass", "decomposition_check", "energy", "energy_gradient", "generate_mesh",
    "harmonic_extension", "lambda_dirichlet", "lambda_robin", "mu_neumann", "norm_eval",
    "norm_grad", "norm_hess_F2", "projection_constant", "q_plain", "q_value", "read_mesh",
    "run_matrix", "sigma", "solve_dirichlet_matching", "solver_core", "verify_theorem",
    "write_mesh",
]
