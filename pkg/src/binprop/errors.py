"""Error types for binprop, each tied to a CLI exit code."""


class BinpropError(Exception):
    """Base class for all binprop errors."""

    exit_code = 1


class ConfigError(BinpropError, ValueError):
    """Invalid run configuration, flag or sweep axis."""

    exit_code = 2


class DataError(BinpropError, ValueError):
    """Unreadable, malformed or inconsistent input data."""

    exit_code = 3


class DimensionError(BinpropError, ValueError):
    """Operand shapes do not chain."""

    exit_code = 3


class InvariantError(BinpropError, RuntimeError):
    """An internal invariant was found broken."""

    exit_code = 4
