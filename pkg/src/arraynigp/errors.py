"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Raised when an input violates a shape, dimension or value contract."""


class NumericalError(ArithmeticError):
    """Raised when a factorization fails even after jitter.

    Attributes
    ----------
    condition : float or None
        Estimated 2-norm condition number of the offending matrix, if it
        could be computed.
    iteration : int or None
        Fixed-point iteration index at which the failure happened, when the
        error comes from the input-noise loop.
    """

    def __init__(self, message, condition=None, iteration=None):
        super().__init__(message)
        self.condition = condition
        self.iteration = iteration
