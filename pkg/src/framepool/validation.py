"""Input validation helpers shared across the package.

Embeddings are plain numpy arrays: a text embedding is a (D,) vector, a
video is an (F, D) row-major matrix of per-frame vectors. Training and
inference run in float32; gradient checks run the same code in float64.
"""

import numpy as np

from .errors import DataError, NumericError, ParameterError, ShapeError


def as_matrix(x, name="matrix"):
    """Coerce to a 2-D C-contiguous float array, rejecting non-finite entries."""
    arr = np.ascontiguousarray(x)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D", arr.shape)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    check_finite(arr, name)
    return arr


def as_vector(x, name="vector"):
    arr = np.ascontiguousarray(x)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D", arr.shape)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    check_finite(arr, name)
    return arr


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def check_probability(p, name="rate", *, allow_one=False):
    upper_ok = p <= 1.0 if allow_one else p < 1.0
    if not (0.0 <= p and upper_ok):
        bound = "[0, 1]" if allow_one else "[0, 1)"
        raise ParameterError(f"{name} must be in {bound}, got {p}")
    return float(p)


def check_nonzero_rows(matrix, name="embeddings"):
    """Reject zero-norm rows; cosine similarity is undefined for them."""
    norms = np.sqrt((matrix.astype(np.float64) ** 2).sum(axis=1))
    bad = np.nonzero(norms == 0.0)[0]
    if bad.size:
        raise DataError(f"{name} has zero-norm row(s) at index {bad[0]}")
    return matrix
