"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Malformed user input: bad norm parameters, meshes, weights or configs."""


class NormDomainError(ValueError):
    """A derivative of F was requested at the origin, where F is not differentiable."""


class ConvergenceError(RuntimeError):
    """An iterative solve stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations
