"""Exception hierarchy.

Every error raised by the package derives from :class:`OrbitStabError` so
callers (and the command line front end) can map failures to exit codes.
"""


class OrbitStabError(Exception):
    """Base class for all package errors."""


class ValidationFailure(OrbitStabError):
    """A problem definition violates one of the stated assumptions."""


class EvaluatorFailure(ValidationFailure):
    """A user supplied evaluator raised or returned non-finite values."""


class NumericalFailure(OrbitStabError):
    """Base class for failures of a numerical procedure."""


class IntegrationFailure(NumericalFailure):
    pass


class NonOrientableFrame(NumericalFailure):
    pass


class OutOfTube(NumericalFailure):
    """Point lies outside the tubular neighbourhood of the orbit."""


class TubeExit(OutOfTube):
    """A trajectory left the tube during integration."""


class SingularJacobian(NumericalFailure):
    pass


class NonPSDHessian(NumericalFailure):
    pass


class NoStabilizingSolution(NumericalFailure):
    pass


class ResidualTooLarge(NumericalFailure):
    pass


class NotNormallyHyperbolic(NumericalFailure):
    def __init__(self, message, multiplier=None):
        super().__init__(message)
        self.multiplier = multiplier


class GradientMismatch(NumericalFailure):
    pass


class BvpDiverged(NumericalFailure):
    pass


class HorizonExceeded(NumericalFailure):
    pass


class NonDecaying(NumericalFailure):
    pass
