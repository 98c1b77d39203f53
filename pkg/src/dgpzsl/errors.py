"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input rejected: bad shape, bad index, malformed file, broken invariant."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value or failed a numeric check."""
