"""Exception types shared across the package.

The CLI maps each family onto an exit status: configuration problems exit 1,
data problems exit 2, numerical failures exit 3.
"""


class ContractViolation(Exception):
    """A caller broke a documented precondition (shape, length, order)."""


class ConfigError(ValueError):
    """Invalid configuration or hyperparameter."""


class ParseError(ValueError):
    """Malformed input data."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(ArithmeticError):
    """A NaN or infinity showed up where finite values are required."""
