"""Exception hierarchy shared by every module.

CLI exit codes are derived from the class: configuration, shape and data
problems map to 2, numerical failures map to 3.
"""


class MccaLabError(Exception):
    exit_code = 2


class InvalidConfigError(MccaLabError, ValueError):
    pass


class ShapeError(MccaLabError, ValueError):
    pass


class DegenerateInputError(MccaLabError, ValueError):
    pass


class InvalidBatchError(MccaLabError, ValueError):
    pass


class NumericalError(MccaLabError, ArithmeticError):
    exit_code = 3


class TrainingDivergedError(NumericalError):
    """Raised when a loss or gradient becomes non-finite.

    ``last_report`` holds the most recent finite loss report, if any.
    """

    def __init__(self, message, last_report=None):
        super().__init__(message)
        self.last_report = last_report
