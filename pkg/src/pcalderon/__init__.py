"""Boundary determination lab for the weighted p-Laplace conductivity problem.

Simulates Dirichlet-to-Neumann measurements on 2-D smooth domains and
reconstructs the conductivity and its full gradient at boundary points from
those measurements alone.
"""

__version__ = "0.1.0"

from .geometry import (BoundaryFrame, Domain, Mesh, boundary_frame,
                       boundary_quadrature, build_disk_domain, flatten_map,
                       generate_mesh, read_mesh, write_mesh)
from .wolff import (CutoffSpec, OscillatingDatum, WolffProfile,
                    eval_oscillating_datum, half_space_solution, make_datum,
                    oscillating_boundary_data, oscillator_potential,
                    p_laplace_residual, scaling_constant, smoothstep_cutoff,
                    solve_profile)
from .forward import (Conductivity, ForwardSolution, SolverConfig,
                      assemble_energy, epsilon_convergence_report, gradient_at,
                      linear_solve_p2, solve_dirichlet)

__all__ = [
    "BoundaryFrame", "Domain", "Mesh", "boundary_frame", "boundary_quadrature",
    "build_disk_domain", "flatten_map", "generate_mesh", "read_mesh", "write_mesh",
    "CutoffSpec", "OscillatingDatum", "WolffProfile", "eval_oscillating_datum",
    "half_space_solution", "make_datum", "oscillating_boundary_data",
    "oscillator_potential", "p_laplace_residual", "scaling_constant",
    "smoothstep_cutoff", "solve_profile",
    "Conductivity", "ForwardSolution", "SolverConfig", "assemble_energy",
    "epsilon_convergence_report", "gradient_at", "linear_solve_p2",
    "solve_dirichlet",
]
