"""Exception hierarchy shared by every decwatt module.

``DataError`` subclasses describe bad inputs (CLI exit code 2);
``NumericalError`` subclasses describe solver failures (exit code 3).
"""

from __future__ import annotations


class DecwattError(Exception):
    exit_code = 2


class DataError(DecwattError, ValueError):
    exit_code = 2


class NumericalError(DecwattError, ArithmeticError):
    exit_code = 3


# -- trace parsing ---------------------------------------------------------

class TraceError(DataError):
    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


class MalformedLine(TraceError):
    pass


class RangeViolation(TraceError):
    def __init__(self, message: str, line_no: int | None = None, field: str | None = None):
        self.field = field
        super().__init__(message, line_no)


class MissingStreamBegin(TraceError):
    pass


class DuplicateStreamBegin(TraceError):
    pass


# -- features / models -----------------------------------------------------

class WrongKind(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class MissingVariables(DataError):
    pass


class NonPositiveNormalizer(DataError):
    pass


class DomainError(DataError):
    pass


# -- fitting / evaluation --------------------------------------------------

class InsufficientRows(DataError):
    pass


class TooFewRows(InsufficientRows):
    pass


class NonPositiveEnergy(DataError):
    pass


class BoundViolation(DataError):
    pass


class EmptyList(DataError):
    pass


class MissingFrameCount(DataError):
    pass


class NonMonotoneGroup(DataError):
    pass


class NoConvergence(NumericalError):
    pass


# -- simulation lab --------------------------------------------------------

class MismatchedTraces(DataError):
    pass


class TooFewSamples(DataError):
    pass


class NonPositiveMean(DataError):
    pass


class ConfigInvalid(DataError):
    pass
