"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Raised when an argument violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver fails to reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class NumericalError(RuntimeError):
    """Raised when an experiment produces a non-finite metric."""

    def __init__(self, message: str, replica: int, iteration: int):
        super().__init__(f"{message} at replica {replica}, iteration {iteration}")
        self.replica = replica
        self.iteration = iteration
