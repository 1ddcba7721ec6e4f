"""Exception hierarchy shared across the package."""


class VicnetError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(VicnetError, ValueError):
    exit_code = 2


class DataError(VicnetError, ValueError):
    exit_code = 3


class WindowError(DataError):
    """Profile does not fit the downsampling / padding window."""


class RangeError(DataError):
    """Requested range lies outside the available data."""


class SimError(DataError):
    """Charging protocol infeasible for the simulated module."""


class ShapeError(VicnetError, ValueError):
    exit_code = 2

    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"[{layer}] {message}"
        super().__init__(message)
        self.layer = layer


class NumericError(VicnetError, ArithmeticError):
    exit_code = 4


class StateError(VicnetError, RuntimeError):
    exit_code = 4


class TransferError(VicnetError, ValueError):
    exit_code = 2
