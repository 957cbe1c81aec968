from typing import Optional, Sequence

from .constants import ERROR_MESSAGES


class OsmarginError(Exception):
    """Base exception for osmargin errors"""
    pass


class ContractViolationError(OsmarginError, ValueError):
    """Raised when an operation is called outside its preconditions"""
    pass


class InvalidHyperParamsError(ContractViolationError):
    """Raised when OSM hyperparameters break lambda_max > lambda_min >= 0"""
    def __init__(self, reason):
        self.reason = reason
        super().__init__(ERROR_MESSAGES['hyperparams'].format(reason=reason))


class InfeasibleTargetError(OsmarginError):
    """Raised when a CTC target has no valid alignment in the available frames"""
    def __init__(self, target_length: int, required: int, frames: int,
                 indices: Optional[Sequence[int]] = None):
        self.target_length = target_length
        self.required = required
        self.frames = frames
        self.indices = list(indices) if indices is not None else []
        message = ERROR_MESSAGES['infeasible'].format(
            length=target_length, required=required, frames=frames
        )
        if self.indices:
            message = f"{message} (examples {', '.join(map(str, self.indices))})"
        super().__init__(message)


class SearchSpaceTooLargeError(OsmarginError):
    """Raised when brute-force CTC enumeration would exceed the path limit"""
    pass


class DatasetError(OsmarginError):
    """Base exception for dataset ingestion errors"""
    pass


class MissingDatasetFileError(DatasetError, FileNotFoundError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class RaggedRowError(DatasetError):
    """Raised when a CSV row has a different field count from the first row"""
    def __init__(self, line: int, expected: int, actual: int):
        self.line = line
        super().__init__(
            ERROR_MESSAGES['ragged_row'].format(line=line, expected=expected, actual=actual)
        )


class NonNumericFieldError(DatasetError):
    """Raised when a CSV field cannot be parsed as a number"""
    def __init__(self, line: int, field: int, value: str):
        self.line = line
        self.field = field
        super().__init__(
            ERROR_MESSAGES['non_numeric'].format(line=line, field=field, value=value)
        )


class UnknownLabelError(DatasetError):
    """Raised when an evaluation file uses a label the training file never does"""
    def __init__(self, line: int, label: int):
        self.line = line
        self.label = label
        super().__init__(ERROR_MESSAGES['unknown_label'].format(line=line, label=label))


class CheckpointError(OsmarginError):
    pass


class ConfigError(OsmarginError):
    """Raised for invalid run configuration; names the offending field"""
    def __init__(self, field: str, reason: Optional[str] = None):
        self.field = field
        if reason is None:
            message = ERROR_MESSAGES['config_missing'].format(field=field)
        else:
            message = ERROR_MESSAGES['config_field'].format(field=field, reason=reason)
        super().__init__(message)
