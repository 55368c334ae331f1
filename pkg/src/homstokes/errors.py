"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class HomStokesError(Exception):
    """Base class; ``stage`` names the pipeline stage that failed."""

    stage = "unknown"

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class ConfigError(HomStokesError):
    """Malformed configuration or expression text."""

    stage = "config"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f"line {line}, column {column or 1}: "
        elif column is not None:
            loc = f"column {column}: "
        super().__init__(loc + message)
        self.line = line
        self.column = column


class DataError(HomStokesError):
    """Invalid field data (non-finite samples, wrong shapes, grid mismatch)."""

    stage = "data"


class GeometryError(HomStokesError):
    stage = "geometry"


class SolvabilityError(HomStokesError):
    """Right-hand side violates a compatibility condition of the torus problem."""

    stage = "solvability"


class SolverError(HomStokesError):
    """Iterative solver failed to reach the requested tolerance."""

    stage = "solver"

    def __init__(self, message: str, residual_history=(), stage: str | None = None):
        super().__init__(message, stage)
        self.residual_history = list(residual_history)


class ConsistencyError(HomStokesError):
    """Inputs that should be mutually consistent are not."""

    stage = "consistency"


class ResolutionError(HomStokesError):
    """Grid too coarse for the requested oscillation scale."""

    stage = "resolution"


class FitError(HomStokesError):
    stage = "fit"
