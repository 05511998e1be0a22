"""Exception types raised across the package."""


class AnisoQuantError(Exception):
    """Base class for all package errors."""


class ValidationError(AnisoQuantError, ValueError):
    """Bad arguments or malformed inputs."""


class ZeroNormDatapoint(ValidationError):
    pass


class InvalidThreshold(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DimensionNotDivisible(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class EmptyIndex(ValidationError):
    pass


class CodeOutOfRange(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class MalformedFile(ValidationError):
    pass


class GroundTruthMismatch(ValidationError):
    pass


class QuadratureFailure(AnisoQuantError, ArithmeticError):
    """Adaptive integration did not reach the requested tolerance."""


class SingularSystem(AnisoQuantError, ArithmeticError):
    """A codebook normal-equation system was not positive definite."""
