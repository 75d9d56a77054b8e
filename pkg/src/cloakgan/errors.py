"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Bad user-supplied configuration (resolution, radii, file schema, ...)."""


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class SolverError(RuntimeError):
    """The linear solver failed to produce a usable solution."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericalError(ArithmeticError):
    """NaN/Inf detected where finite values are required."""
