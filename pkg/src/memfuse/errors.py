"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or malformed shapes."""


class ParameterError(ValueError):
    """A scalar argument or configuration value is out of its valid range."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""
