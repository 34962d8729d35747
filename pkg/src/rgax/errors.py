"""Exception hierarchy.

Data problems (bad files, unknown ids, schema mismatches) derive from
:class:`DataError`; numerical failures (separation, degenerate variance,
non-convergence) derive from :class:`NumericError`. The CLI maps the two
families onto distinct exit codes.
"""


class RgaxError(Exception):
    """Base class for all library errors."""


class DataError(RgaxError, ValueError):
    pass


class SchemaError(DataError):
    pass


class UnknownActorError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ModelFormatError(DataError):
    """Corrupt model file or unsupported format version."""


class DisconnectedScheduleError(DataError):
    pass


class NumericError(RgaxError, ArithmeticError):
    pass


class SeparationError(NumericError):
    pass


class RankDeficientError(NumericError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DegenerateVarianceError(NumericError):
    pass


class ConvergenceError(NumericError):
    pass
