"""Periodic fields, coefficient validation and half-space geometry."""

from .expressions import Expression, parse_expression, parse_vector_expression
from .periodic import (BoundaryData, EllipticityReport, EllipticTensorField, GridSpec, PeriodicField,
                       check_ellipticity, spectral_gradient)
from .geometry import (DiophantineEstimate, HalfSpaceGeometry, RationalNormal, classify_normal,
                       diophantine_estimate, rotation_matrix, tangential_lattice_basis)
from .gridio import read_grid_field, write_grid_field

__all__ = [
    "Expression",
    "parse_expression",
    "parse_vector_expression",
    "BoundaryData",
    "EllipticityReport",
    "EllipticTensorField",
    "GridSpec",
    "PeriodicField",
    "check_ellipticity",
    "spectral_gradient",
    "DiophantineEstimate",
    "HalfSpaceGeometry",
    "RationalNormal",
    "classify_normal",
    "diophantine_estimate",
    "rotation_matrix",
    "tangential_lattice_basis",
    "read_grid_field",
    "write_grid_field",
]
