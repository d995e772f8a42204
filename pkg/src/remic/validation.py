"""Input validation helpers shared by the estimator and the low-level ops."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch, ValidationError


def as_float_array(x, name: str = "array") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if not np.isfinite(a).all():
        raise ValidationError(f"{name} holds non-finite values", code="NON_FINITE_INPUT")
    return a


def check_spectrogram_matrix(x, dims: tuple[int, int] | None = None, name: str = "spectrogram") -> np.ndarray:
    a = as_float_array(x, name)
    if a.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D (T, F), got shape {a.shape}")
    if dims is not None and tuple(a.shape) != tuple(dims):
        raise ShapeMismatch(f"{name} has shape {a.shape}, expected {tuple(dims)}")
    return a


def check_spectrogram_batch(X, dims: tuple[int, int] | None = None, name: str = "X") -> np.ndarray:
    """Accept (N, T, F) or a single (T, F) matrix promoted to a batch of one."""
    a = as_float_array(X, name)
    if a.ndim == 2:
        a = a[None, :, :]
    if a.ndim != 3:
        raise ShapeMismatch(f"{name} must be (N, T, F), got shape {a.shape}")
    if dims is not None and tuple(a.shape[1:]) != tuple(dims):
        raise ShapeMismatch(f"{name} clips have shape {a.shape[1:]}, expected {tuple(dims)}")
    return a


def check_tristate_matrix(Y, n_classes: int | None = None, name: str = "Y") -> np.ndarray:
    """Validate an (N, C) tri-state matrix of {1, 0, -1} codes."""
    a = np.asarray(Y)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeMismatch(f"{name} must be (N, C), got shape {a.shape}")
    if not np.isin(a, (1, 0, -1)).all():
        raise ValidationError(
            f"{name} must hold only 1 (positive), 0 (negative), -1 (missing)",
            code="INVALID_STATE",
        )
    if n_classes is not None and a.shape[1] != n_classes:
        raise ValidationError(
            f"{name} has {a.shape[1]} classes, expected {n_classes}", code="LENGTH_MISMATCH"
        )
    return a.astype(np.int8)


def check_probabilities(p, name: str = "probabilities") -> np.ndarray:
    a = as_float_array(p, name)
    if (a < 0).any() or (a > 1).any():
        raise ValidationError(f"{name} must lie in [0, 1]", code="OUT_OF_RANGE")
    return a


def check_positive(value, name: str):
    if value is None or value <= 0:
        raise ValidationError(f"{name} must be positive, got {value}", code="OUT_OF_RANGE")
    return value
