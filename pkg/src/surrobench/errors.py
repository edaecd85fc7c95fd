"""Exception types raised across the package."""


class SurrogateError(Exception):
    """Base class for package errors."""


class DomainError(SurrogateError, ValueError):
    """A point lies outside the domain a basis or surrogate was built on."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class PivotError(SurrogateError):
    """Maxvol pivoting failed on a rank-deficient matrix."""

    def __init__(self, message, mode=None):
        super().__init__(message if mode is None else f"{message} (mode {mode})")
        self.mode = mode


class CareError(SurrogateError):
    """The algebraic Riccati equation has no usable stabilizing solution."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class InstabilityError(SurrogateError):
    """A closed-loop trajectory blew up."""

    def __init__(self, message, time=None, law=None):
        super().__init__(message)
        self.time = time
        self.law = law


class SingularityError(SurrogateError, ValueError):
    """Gradient requested at a non-differentiable point."""


class FitError(SurrogateError):
    """A fitter could not produce a model."""
