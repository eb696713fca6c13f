"""Small input-validation helpers used by the estimators and functions."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError, InsufficientRowsError


def as_data_matrix(X, *, min_rows=2, min_cols=2, name="X"):
    """Return ``X`` as a finite 2-D float64 array, checking its size."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=1, ensure_min_features=1)
    if X.shape[1] < min_cols:
        raise DimensionError(f"{name} needs at least {min_cols} attributes, got {X.shape[1]}")
    if X.shape[0] < min_rows:
        raise InsufficientRowsError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    return X


def check_square(M, size, name="matrix"):
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (size, size):
        raise DimensionError(f"{name} must be {size}x{size}, got {M.shape}")
    return M


def check_same_shape(A, B):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape != B.shape:
        raise DimensionError(f"shape mismatch: {A.shape} vs {B.shape}")
    return A, B
