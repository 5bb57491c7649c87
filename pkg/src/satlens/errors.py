"""Exception hierarchy.

Every error carries a stable ``kind`` string (used in the CLI's machine-readable
error output) and an ``exit_code``: 2 for user/config errors, 3 for data or
bundle errors, 4 for numeric failures.
"""


class SatlensError(Exception):
    exit_code = 2

    @property
    def kind(self) -> str:
        return type(self).__name__


# -- user / configuration errors (exit 2) ------------------------------------

class DomainError(SatlensError, ValueError):
    pass


class DimensionError(SatlensError, ValueError):
    pass


class DimensionMismatch(SatlensError, ValueError):
    pass


class ShapeMismatch(SatlensError, ValueError):
    pass


class NonSquare(SatlensError, ValueError):
    pass


class AsymmetricInput(SatlensError, ValueError):
    pass


class UnsupportedTopology(SatlensError, ValueError):
    pass


class ConfigError(SatlensError, ValueError):
    pass


class DatasetNotFound(SatlensError, FileNotFoundError):
    pass


class MissingEigenspace(SatlensError, RuntimeError):
    pass


class TooFewLayers(SatlensError, ValueError):
    pass


class TooFewPairs(SatlensError, ValueError):
    pass


class DegenerateLabels(SatlensError, ValueError):
    pass


class DegenerateBaseline(SatlensError, ZeroDivisionError):
    pass


class NoQualifyingDelta(SatlensError, LookupError):
    pass


# -- data / bundle errors (exit 3) -------------------------------------------

class DataError(SatlensError):
    exit_code = 3


class BadMagic(DataError, ValueError):
    pass


class TruncatedFile(DataError, ValueError):
    pass


class CountMismatch(DataError, ValueError):
    pass


class BadBundle(DataError, ValueError):
    pass


# -- numeric failures (exit 4) -----------------------------------------------

class NumericError(SatlensError, ArithmeticError):
    exit_code = 4


class NoConvergence(NumericError):
    pass


class EmptyAccumulator(NumericError):
    pass


class ZeroVariance(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass
