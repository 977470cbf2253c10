"""
Error types raised across the toolkit.

Every error carries a human readable ``detail`` and the process exit code the
CLI reports when it escapes a command.
"""
from typing import Optional


EXIT_OK = 0
EXIT_INVARIANT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class SDTMError(Exception):
    exit_code: int = EXIT_USAGE

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ShapeError(SDTMError):
    pass


class TapeError(SDTMError):
    pass


class NumericError(SDTMError):
    exit_code = EXIT_NUMERIC

    def __init__(self, detail: str, term: Optional[str] = None):
        super().__init__(detail if term is None else f"{term}: {detail}")
        self.term = term


class EmptyEpisodeError(SDTMError):
    pass


class EmptyBatchError(SDTMError):
    pass


class LabelError(SDTMError):
    pass


class RangeError(SDTMError):
    pass


class InsufficientSamplesError(SDTMError):
    pass


class IoError(SDTMError):
    pass


class FormatError(SDTMError):
    pass


class ConfigError(SDTMError):
    pass
