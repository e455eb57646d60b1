"""Exception hierarchy shared across the package.

``ConfigError`` marks invalid user input (bad parameters, inconsistent
steps); ``NumericalError`` marks a computation that started from valid
input but could not be completed reliably.  The CLI maps them to exit
codes 2 and 3 respectively.
"""


class ConfigError(ValueError):
    """Invalid configuration or argument combination."""


class NumericalError(RuntimeError):
    """A numerical procedure failed or lost reliability."""


class ScaleOverflowError(NumericalError):
    """Exponentiating the log scale density would overflow.

    Carries ``log_value`` so callers can keep working in log space.
    """

    def __init__(self, log_value):
        self.log_value = log_value
        super().__init__(
            f"scale overflow: log value {log_value:.6g} exceeds float range"
        )


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach the requested tolerance.

    Carries ``error_estimate``, the absolute error estimate achieved.
    """

    def __init__(self, message, error_estimate):
        self.error_estimate = error_estimate
        super().__init__(f"{message} (achieved error estimate {error_estimate:.3g})")


class OutOfGridError(ValueError):
    """Query point lies beyond the grid; enlarge the grid and retry."""


class HoldingTimeWarning(RuntimeWarning):
    """Time step is large relative to the generator's holding times."""
