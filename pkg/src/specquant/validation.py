"""Input coercion shared by the numeric modules.

Matrices are 2-D row-major float64 arrays; vectors are 1-D float64 arrays.
Everything is validated to be finite on the way in so the math never has to
re-check.
"""

import numpy as np


def as_matrix(a, name="matrix"):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got {arr.ndim}-D")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def as_vector(a, name="vector", min_len=1):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got {arr.ndim}-D")
    if arr.size < min_len:
        raise ValueError(f"{name} must have at least {min_len} element(s)")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr
