"""Exception types shared across the package."""


class DataError(ValueError):
    """Base class for problems with input data."""


class SchemaError(DataError):
    """A required column is missing or the column mapping is inconsistent."""


class CsvParseError(DataError):
    """A cell failed to parse; carries the offending row and column."""

    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyDataError(DataError):
    """The input contains no data rows."""


class StripEmptyError(ValueError):
    """No observations fall inside the identification strip."""


class ConfigurationError(ValueError):
    """A configuration is invalid for the given data (e.g. strip too thin)."""


class EstimationError(RuntimeError):
    """A model fit could not be carried out."""
