"""Exception hierarchy. CLI exit codes hang off ``exit_code``."""


class EncforestError(Exception):
    exit_code = 1


class ValidationError(EncforestError, ValueError):
    """Malformed input, bad parameters, shape or range violations."""

    exit_code = 2


class DimensionMismatchError(ValidationError):
    pass


class PlaintextRangeError(ValidationError):
    pass


class DomainOverflowError(ValidationError):
    pass


class DegenerateInputError(ValidationError):
    pass


class UnknownRequestError(EncforestError, KeyError):
    exit_code = 2


class OracleMismatchError(EncforestError):
    """An encrypted computation disagreed with its plaintext counterpart."""

    exit_code = 3
