"""Exception types shared across the package."""


class UsageError(ValueError):
    """Invalid input: wrong shapes, unsupported cone, violated precondition."""


class DomainError(ValueError):
    """An argument lies outside the convergence region of a Laplace integral."""

    def __init__(self, message, offending=None):
        super().__init__(message)
        self.offending = offending


class NumericError(ArithmeticError):
    """A numerical routine failed (singular system, non-convergence)."""
