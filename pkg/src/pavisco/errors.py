"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Inconsistent or unsupported configuration."""


class GeometryError(ValueError):
    """Phantom or sensor geometry does not fit the grid."""


class NumericalInstability(ArithmeticError):
    """Time stepping produced non-finite values or runaway growth."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class DivergenceError(ArithmeticError):
    """Iterative reconstruction increased the objective repeatedly."""
