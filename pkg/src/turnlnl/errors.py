"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class TurnError(Exception):
    exit_code = 1


class ConfigError(TurnError, ValueError):
    exit_code = 2


class DataError(TurnError):
    exit_code = 3


class NumericError(TurnError, ArithmeticError):
    exit_code = 4


def check_finite(arr, what="array"):
    import numpy as np

    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr
