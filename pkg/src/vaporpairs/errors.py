"""Exception hierarchy and the CLI exit codes tied to it."""


class VaporPairsError(Exception):
    exit_code = 1


class ConfigError(VaporPairsError, ValueError):
    """Malformed or out-of-bounds configuration."""

    exit_code = 2


class FileFormatError(VaporPairsError, ValueError):
    """Timestamp or anchor file that cannot be parsed."""

    exit_code = 2

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(VaporPairsError, ArithmeticError):
    """Grid, quadrature or fit failure."""

    exit_code = 3


class StatisticsError(VaporPairsError):
    """Not enough counts to form an estimate."""

    exit_code = 4
