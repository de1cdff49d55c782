import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError


def check_slices(X, dtype=np.float32):
    """Validate a stack of 2-D slices, returning a finite (n, H, W) array."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise DimensionError(f"expected slices shaped (n, H, W), got {X.shape}")
    return check_array(X, allow_nd=True, dtype=dtype, ensure_all_finite=True, ensure_min_features=1)


def check_masks(y, shape=None):
    """Validate binary masks; optionally require a specific shape."""
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    if shape is not None and y.shape != tuple(shape):
        raise DimensionError(f"masks {y.shape} do not match slices {tuple(shape)}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("masks must be binary (0/1)")
    return y.astype(np.uint8)


def check_divisible(h, w, depth):
    factor = 2 ** (depth - 1)
    if h % factor or w % factor:
        raise DimensionError(f"spatial size {h}x{w} must be divisible by {factor} for depth {depth}")
