"""Exception hierarchy shared by the solver, verifier and CLI."""


class NscoptError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NscoptError, ValueError):
    """Invalid parameters, mismatched grids or malformed run configuration.

    ``field`` carries the dotted config path when the error comes from a
    config file, so the CLI can name the offending entry.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class NumericalError(NscoptError, ArithmeticError):
    """A scalar root-finder or similar inner solve failed to converge."""


class IntegrationError(NscoptError, ArithmeticError):
    """Time integration produced non-finite values or violated the CFL guard."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class LineSearchStall(NscoptError, RuntimeError):
    """Armijo backtracking exhausted without sufficient decrease."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CheckpointError(NscoptError, IOError):
    """Missing, truncated or tampered checkpoint file."""
