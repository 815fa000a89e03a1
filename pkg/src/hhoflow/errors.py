"""Exception types shared across the solver."""

from __future__ import annotations


class HhoflowError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(HhoflowError, ValueError):
    """An argument violates a documented precondition."""


class MeshFormatError(HhoflowError):
    """A mesh file could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class MeshTopologyError(HhoflowError):
    """The mesh connectivity is inconsistent (e.g. an edge shared by three cells)."""


class DegenerateCellError(HhoflowError):
    """A cell fails the positive sub-triangle criterion."""


class OutOfDomainError(HhoflowError):
    """A query point lies outside every cell of the mesh."""


class CapabilityError(HhoflowError):
    """A request exceeds a documented capability bound (e.g. quadrature degree)."""


class ConditioningError(HhoflowError):
    """A cell-local operator could not be built because a matrix is singular."""

    def __init__(self, message, cell_id=None):
        self.cell_id = cell_id
        super().__init__(message)


class SolverError(HhoflowError):
    """A sparse solve failed outright or left too large a residual."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class CompatibilityError(HhoflowError):
    """The right-hand side is incompatible with the constraint kernel
    (for the flow problem: injection and production rates do not balance)."""


class ConfigError(HhoflowError):
    """One or more configuration entries are invalid. Collects every problem
    found rather than stopping at the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


class StabilityError(HhoflowError):
    """The discrete solution left the guaranteed stability region."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class InvariantViolationError(HhoflowError):
    """A per-step conservation or energy invariant exceeded its tolerance."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)
