"""Ergodicity certificates, Riccati transforms, moments and simulation for affine processes on cones."""

__version__ = "0.1.0"

from .cones import ConeSpace, Membership  # noqa: E402
from .errors import DomainError, NumericError, UsageError  # noqa: E402
from .params import AffineParams, Atom, ExponentialRay, JumpMeasure, StateDependentJumps  # noqa: E402
from .stability import drift_certificate, effective_drift  # noqa: E402

__all__ = [
    "__version__",
    "AffineParams",
    "Atom",
    "ConeSpace",
    "DomainError",
    "ExponentialRay",
    "JumpMeasure",
    "Membership",
    "NumericError",
    "StateDependentJumps",
    "UsageError",
    "drift_certificate",
    "effective_drift",
]
