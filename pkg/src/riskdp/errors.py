"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Malformed input: bad dimensions, out-of-range ids, invalid probabilities."""


class NumericalError(RuntimeError):
    """Base class for numerical failures (CLI maps these to exit status 2)."""


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class DivergenceError(NumericalError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step
