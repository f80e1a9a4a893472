"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeError


def check_images(X, shape=None) -> np.ndarray:
    """Return ``X`` as a float64 batch, validating finiteness and sample shape.

    A single sample of shape ``shape`` is promoted to a batch of one.
    """
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False, ensure_min_samples=1)
    if shape is not None:
        shape = tuple(shape)
        if X.shape == shape:
            X = X[None]
        if X.shape[1:] != shape:
            raise ShapeError(f"expected samples of shape {shape}, got batch of shape {X.shape}")
    elif X.ndim < 2:
        raise ShapeError(f"expected a batch of samples, got shape {X.shape}")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ShapeError("labels must be integer class indices")
        y = y.astype(np.int64)
    if y.min() < 0:
        raise ShapeError("labels must be non-negative")
    return y
