"""Half-space boundary layers on laterally periodic strips."""

from .layer import (BoundaryLayerSolution, CylinderProblem, TailComparison, TailVector, compare_tails,
                    default_mesh, extract_tail, gradient_decay_check, profile_csv, solve_boundary_layer,
                    solve_boundary_layers, to_cylinder, truncation_sensitivity)
from .sem import SpectralElementMesh, graded_mesh, uniform_mesh
from .strip import LateralModes, StripGeometry, StripSolution, StripSolver

__all__ = [
    "BoundaryLayerSolution",
    "CylinderProblem",
    "TailComparison",
    "TailVector",
    "compare_tails",
    "default_mesh",
    "extract_tail",
    "gradient_decay_check",
    "profile_csv",
    "solve_boundary_layer",
    "solve_boundary_layers",
    "to_cylinder",
    "truncation_sensitivity",
    "SpectralElementMesh",
    "graded_mesh",
    "uniform_mesh",
    "LateralModes",
    "StripGeometry",
    "StripSolution",
    "StripSolver",
]
