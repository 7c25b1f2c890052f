"""Exception hierarchy shared across the library and the command line tool.

Each class carries the process exit code used by the CLI so that callers
can map failures without string matching.
"""


class GrpboostError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(GrpboostError):
    """Invalid configuration: bad option values, missing keys, bad ranges."""

    exit_code = 2


class DataError(GrpboostError):
    """Malformed or insufficient input data."""

    exit_code = 3


class NumericError(GrpboostError):
    """Numerical failure: non-PD matrix, divergent optimizer, domain violation."""

    exit_code = 4
