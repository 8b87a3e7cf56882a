"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: config errors -> 2, data errors -> 3,
numerical failures -> 4.
"""


class CalibrationError(Exception):
    exit_code = 1


class ConfigError(CalibrationError):
    exit_code = 2


class DataError(CalibrationError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IntegrityError(DataError):
    pass


class NumericalError(CalibrationError):
    exit_code = 4


class DegenerateFitError(NumericalError):
    pass


class VisibilityError(NumericalError):
    """Point lies behind (or on the image plane of) a camera."""
