"""Exception and warning types shared across the package."""


class ModelValidationError(ValueError):
    """Malformed or assumption-violating model input.

    ``path`` is a dotted/indexed location inside the config document when the
    error originates from parsing, e.g. ``"model.rates[0]"``.
    """

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path


class RowSumViolation(ModelValidationError):
    pass


class NegativeOffDiagonal(ModelValidationError):
    pass


class DegenerateDissipativity(ModelValidationError):
    pass


class ZeroDiscount(ModelValidationError):
    pass


class AssumptionViolation(ModelValidationError):
    """A sampled structural inequality failed on the validation sample."""


class SolverError(RuntimeError):
    pass


class NonFiniteState(SolverError):
    pass


class MaxStepsExceeded(SolverError):
    def __init__(self, message: str, residual: float, steps: int):
        super().__init__(message)
        self.residual = residual
        self.steps = steps


class HorizonTooShort(SolverError):
    pass


class DegenerateFit(SolverError):
    pass


class StepTooLarge(ValueError):
    pass


class InconclusiveBias(RuntimeError):
    pass


class ClampActivated(RuntimeWarning):
    pass


class NonMonotoneLambda(RuntimeWarning):
    pass


class OutOfGridWarning(RuntimeWarning):
    pass


class HeavyTailWarning(RuntimeWarning):
    pass
