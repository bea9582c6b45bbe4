"""Numerical projective differential geometry on coordinate charts.

Connections are given by Christoffel symbols (or a metric) built from symbolic
scalar fields.  On top of that sit the normal tractor connection, the Thomas cone,
normal-frame homogeneous coordinates, first BGG operators and their prolongations,
and the stratification of a chart by a parallel tractor.
"""

from .errors import (
    CertificateError,
    DomainExit,
    EvaluationError,
    ParseError,
    ProjTractorError,
    ShootingError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "CertificateError",
    "DomainExit",
    "EvaluationError",
    "ParseError",
    "ProjTractorError",
    "ShootingError",
    "ValidationError",
    "__version__",
]
