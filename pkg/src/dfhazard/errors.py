"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside an operation's admissible domain."""


class RasterFormatError(DomainError):
    """Malformed ESRI ASCII grid file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SeparationError(DomainError):
    """Logistic fit diverged because the labels are (quasi-)separable."""


class RankError(DomainError):
    """Singular information matrix in the logistic fit."""


class NumericalBlowUpError(RuntimeError):
    """Non-finite value appeared in the flow solver."""

    def __init__(self, step, cell, field):
        self.step = step
        self.cell = cell
        self.field = field
        super().__init__(f"non-finite {field} at cell (row={cell[0]}, col={cell[1]}) on step {step}")
