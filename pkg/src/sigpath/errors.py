"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data, configuration or state failed a consistency check."""


class NumericalError(ArithmeticError):
    """A sampler kernel produced a non-finite or invalid quantity."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


class CycleError(ValidationError):
    """A directed edge list that must be acyclic contains a cycle."""
