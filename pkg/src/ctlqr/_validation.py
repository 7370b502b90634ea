"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

import numpy as np

from .exceptions import InvalidArgumentError


def as_float_array(x, name: str = "array", ndim: int | None = None) -> np.ndarray:
    """Convert ``x`` to a finite float64 array, optionally enforcing ``ndim``."""
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"{name} is not numeric: {exc}") from None
    if ndim is not None and arr.ndim != ndim:
        raise InvalidArgumentError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def check_square(A, name: str = "A") -> np.ndarray:
    A = as_float_array(A, name)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty square matrix, got shape {A.shape}")
    return A


def check_matrix(M, name: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    M = as_float_array(M, name)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {M.shape}")
    if rows is not None and M.shape[0] != rows:
        raise InvalidArgumentError(f"{name} must have {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise InvalidArgumentError(f"{name} must have {cols} columns, got {M.shape[1]}")
    return M


def check_vector(v, name: str, size: int | None = None) -> np.ndarray:
    v = as_float_array(v, name)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise InvalidArgumentError(f"{name} must be a vector, got shape {v.shape}")
    if size is not None and v.shape[0] != size:
        raise InvalidArgumentError(f"{name} must have length {size}, got {v.shape[0]}")
    return v


def check_positive(value, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"{name} must be a real number") from None
    if not np.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f"{name} must be positive and finite, got {value}")
    return value


def check_symmetric(M, name: str, atol: float = 1e-10) -> np.ndarray:
    M = check_square(M, name)
    if not np.allclose(M, M.T, atol=atol, rtol=0):
        raise InvalidArgumentError(f"{name} must be symmetric")
    return M
