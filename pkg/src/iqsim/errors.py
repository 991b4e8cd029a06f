"""Exception types shared across modules."""


class IqsError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class DimensionMismatch(IqsError):
    pass


class SectorViolation(IqsError):
    pass


class IndexOutOfRange(IqsError):
    pass


class ConvergenceFailure(IqsError):
    pass


class DimensionCap(IqsError):
    exit_code = 4


class NonHermitianPool(IqsError):
    pass


class IterationCap(IqsError):
    pass


class InfeasibleConstraints(IqsError):
    pass


class NoSolution(IqsError):
    pass


class SingularSystem(IqsError):
    pass


class DivergenceDetected(IqsError):
    pass


class NotGroundState(IqsError):
    pass


class DegenerateGroundState(IqsError):
    pass


class ExperimentFailed(IqsError):
    """A runner hit a numerical error that is not one of the toolkit's own."""


class ConfigInvalid(IqsError):
    exit_code = 2

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = dict(fields or {})
