"""Exception types shared across the package."""


class ProjTractorError(Exception):
    """Base class for all package errors."""


class ParseError(ProjTractorError, ValueError):
    def __init__(self, message: str, position: int, token: str):
        super().__init__(f"{message} (position {position})")
        self.position = position
        self.token = token


class EvaluationError(ProjTractorError, ArithmeticError):
    """A field was evaluated at a singular point (division by zero, log/sqrt domain)."""


class DomainExit(ProjTractorError):
    """An integration left the chart domain."""


class ShootingError(ProjTractorError):
    """Inverting the exponential chart failed."""


class ValidationError(ProjTractorError, ValueError):
    """Configuration or input data violates a declared invariant."""


class CertificateError(ProjTractorError):
    """A tractor expected to be parallel failed its normality certificate."""
