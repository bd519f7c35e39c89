"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all rdstab errors."""


class GridMismatch(ToolkitError):
    """Two fields (or a field and an operator) live on different grids."""


class ConvergenceFailure(ToolkitError):
    """An iterative solver ran out of iterations.

    Carries the last residual so callers can report how close it got.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NotApplicable(ToolkitError):
    """Inputs fall outside the hypotheses of the requested operation."""


class ExpressionError(ToolkitError):
    """Growth-rate expression failed to parse or sample.

    ``column`` is the 1-based position in the source string, when known.
    """

    def __init__(self, message, column=None):
        if column is not None:
            message = f"{message} (column {column})"
        super().__init__(message)
        self.column = column


class ConfigError(ToolkitError):
    """Experiment configuration is invalid."""
