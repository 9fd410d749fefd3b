"""Exception hierarchy.

Data problems (bad files, bad labels, unusable captures) derive from
``DataError``; numeric failures during fitting or training derive from
``NumericError``. The CLI maps the two families to distinct exit codes.
"""

from __future__ import annotations


class DataError(Exception):
    """Input data violates a structural or labelling contract."""


class SchemaMismatchError(DataError):
    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class LabelError(DataError):
    pass


class DegenerateCaptureError(DataError):
    pass


class StratificationError(DataError):
    pass


class InputError(DataError):
    """A feature vector or window has the wrong shape or non-finite values."""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class NumericError(Exception):
    pass


class FitError(NumericError):
    pass


class TrainingError(NumericError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
