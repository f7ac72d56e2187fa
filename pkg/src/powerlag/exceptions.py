"""Exception hierarchy.

Each family maps onto one CLI exit code (see :mod:`powerlag.cli`).
"""


class PowerlagError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(PowerlagError, ValueError):
    """Invalid scenario or argument.

    ``violations`` holds ``(field_path, message)`` pairs when several
    problems were found at once.
    """

    exit_code = 2

    def __init__(self, message, violations=None):
        self.violations = list(violations or [])
        if self.violations and not message:
            message = "; ".join(f"{path}: {msg}" for path, msg in self.violations)
        super().__init__(message)


class DataError(PowerlagError, ValueError):
    """Malformed or inconsistent input data (panels, designs, CSV files)."""

    exit_code = 3


class DegenerateStratumError(DataError):
    """A matched set with fewer than two observations."""


class NumericalError(PowerlagError, ArithmeticError):
    """A computation that cannot produce a finite answer."""

    exit_code = 4


class SingularDesignError(NumericalError):
    """Regressor matrix is rank deficient beyond tolerance."""


class ConvergenceError(NumericalError):
    """Iterative procedure failed to converge."""
