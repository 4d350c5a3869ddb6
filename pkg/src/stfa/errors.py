"""Exception types shared across the pipeline."""


class ShapeError(ValueError):
    """Operand extents do not satisfy an operation's contract."""


class DataError(ValueError):
    """Malformed input data: bad manifest rows, unreadable frames, bad labels."""


class NumericalAbort(ArithmeticError):
    """Training produced a non-finite loss."""
