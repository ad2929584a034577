"""Exception types raised across the package."""


class DegenerateSpectrumError(ValueError):
    """Discretized spectral weights are identically zero."""


class ConvergenceError(RuntimeError):
    """Sinkhorn did not reach the requested marginal tolerance."""

    def __init__(self, message, iterations, residual):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
