"""Exception types carrying stable machine-readable codes.

Every error surfaced by the public API has a ``code`` token that scripts and
tests can match on, and an ``exit_code`` that the CLI maps to its exit-status
contract (2 config, 3 data, 4 numerical).
"""

from __future__ import annotations


class ReprogramError(Exception):
    """Base class for all package errors."""

    code = "ERROR"
    exit_code = 1

    def __init__(self, message: str = "", *, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code

    def __str__(self) -> str:
        base = super().__str__()
        return f"[{self.code}] {base}" if base else f"[{self.code}]"


class ValidationError(ReprogramError):
    """Invalid argument or violated invariant (LENGTH_MISMATCH, BAD_DIMS, ...)."""

    code = "INVALID_ARGUMENT"
    exit_code = 2


class ShapeMismatch(ValidationError):
    code = "SHAPE_MISMATCH"


class ConfigError(ReprogramError):
    code = "CONFIG_INVALID"
    exit_code = 2


class DataError(ReprogramError):
    """Dataset problems (MISSING_SPLIT_FILE, UNRESOLVED_AUDIO, EMPTY_SPLIT, ...)."""

    code = "DATA_ERROR"
    exit_code = 3


class CheckpointError(DataError):
    """Unreadable or mismatched checkpoints (CHECKPOINT_CORRUPT, FINGERPRINT_MISMATCH)."""

    code = "CHECKPOINT_CORRUPT"


class WeightsUnavailable(DataError):
    code = "WEIGHTS_UNAVAILABLE"


class NumericalError(ReprogramError):
    code = "NON_FINITE_LOSS"
    exit_code = 4
