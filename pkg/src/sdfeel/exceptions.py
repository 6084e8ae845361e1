"""Exception hierarchy shared by all modules."""


class SDFEELError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(SDFEELError, ValueError):
    """Inconsistent or invalid configuration (dimensions, graphs, parameters)."""


class ContractViolation(SDFEELError, ValueError):
    """An input violates an operation's precondition."""


class ConvergenceError(SDFEELError, ArithmeticError):
    """An iterative numerical routine failed to converge."""


class DivergenceError(SDFEELError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class ParseError(SDFEELError, ValueError):
    """Malformed input file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
