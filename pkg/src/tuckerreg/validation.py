"""Input-validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError


def check_tensor(t, name: str, min_order: int = 2) -> np.ndarray:
    """Coerce to a float64 ndarray and validate order and finiteness."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < min_order:
        raise ShapeError(
            f"{name} must have at least {min_order} modes (samples first); "
            f"got order {t.ndim}"
        )
    if t.size == 0:
        raise ShapeError(f"{name} is empty")
    if not np.isfinite(t).all():
        raise ValueError(f"{name} contains non-finite values")
    return t


def check_paired_tensors(x, y):
    """Validate a predictor/response pair sharing the sample axis."""
    x = check_tensor(x, "X")
    y = check_tensor(y, "Y")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(
            f"X and Y disagree on the number of samples: {x.shape[0]} vs {y.shape[0]}"
        )
    return x, y


def check_new_predictors(x_new, p_dims) -> np.ndarray:
    """Validate prediction-time predictors against the fitted extents."""
    x_new = check_tensor(x_new, "X")
    if x_new.shape[1:] != tuple(p_dims):
        raise ShapeError(
            f"X extents {x_new.shape[1:]} do not match the fitted extents "
            f"{tuple(p_dims)}"
        )
    return x_new
