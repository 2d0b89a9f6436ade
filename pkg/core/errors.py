"""Exception hierarchy shared by the filtering, smoothing and oracle code."""


class SmootherError(Exception):
    """Base class for every error raised by the library"""


class DomainError(SmootherError, ValueError):
    """Input outside an operation's domain (dimensions, intervals, probabilities)"""


class NumericalError(SmootherError):
    """Singular covariance or a matrix that cannot be repaired to PSD"""


class InfeasibleAssignmentError(SmootherError):
    """No finite-cost assignment covers every row"""


class SmoothingFailure(SmootherError):
    """A backward pass found no feasible global hypothesis"""

    def __init__(self, message: str, time_step: int = None):
        super().__init__(message)
        self.time_step = time_step


class ConfigError(SmootherError):
    """Invalid experiment configuration; carries field-precise messages"""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class EnumerationLimitError(SmootherError):
    """The discrete oracle would enumerate more sets than allowed"""

    def __init__(self, estimate: int, limit: int):
        super().__init__(f"enumeration needs at least {estimate} sets, limit is {limit}")
        self.estimate = estimate
        self.limit = limit
