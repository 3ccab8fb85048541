"""Exception hierarchy shared by every module.

Each error carries the CLI exit code it maps to.
"""


class FriedError(Exception):
    exit_code = 1


class ConfigurationError(FriedError, ValueError):
    """Bad dimensions, bad hyperparameters, malformed config files."""

    exit_code = 2


class UsageError(FriedError, RuntimeError):
    """An API used out of order, e.g. a stale forward cache."""

    exit_code = 2


class DataError(FriedError, ValueError):
    """Unloadable or unusable data."""

    exit_code = 3


class InsufficientDataError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class DivergenceError(FriedError, ArithmeticError):
    """A loss or gradient became non-finite."""

    exit_code = 4
