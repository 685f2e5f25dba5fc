"""Encrypted nearest-neighbor image annotation over a randomized kd-forest."""

from . import annotator, features, harness, ive, ope, rkdf, secure_compare
from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    DomainOverflowError,
    EncforestError,
    OracleMismatchError,
    PlaintextRangeError,
    UnknownRequestError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "annotator", "features", "harness", "ive", "ope", "rkdf", "secure_compare",
    "EncforestError", "ValidationError", "DimensionMismatchError", "PlaintextRangeError",
    "DomainOverflowError", "DegenerateInputError", "UnknownRequestError", "OracleMismatchError",
]
