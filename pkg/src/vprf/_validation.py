"""Small input validation helpers shared by the public API."""

import numbers
import os
import tempfile
from contextlib import contextmanager

import numpy as np
from sklearn.utils import check_array

from .exceptions import DimensionMismatchError, ZeroNormError


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return int(value)


def check_non_negative(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite non-negative number, got {value}")
    return value


def check_vector(vector, dimension=None, name="vector"):
    """Return ``vector`` as a finite 1-d float64 array."""
    arr = check_array(
        np.asarray(vector).reshape(1, -1), dtype=np.float64, ensure_all_finite=True,
        input_name=name,
    )[0]
    if dimension is not None and arr.shape[0] != dimension:
        raise DimensionMismatchError(
            f"{name} has dimension {arr.shape[0]}, expected {dimension}"
        )
    return arr


def check_matrix(matrix, dimension=None, name="matrix", dtype=np.float64):
    arr = check_array(matrix, dtype=dtype, ensure_all_finite=True, input_name=name)
    if dimension is not None and arr.shape[1] != dimension:
        raise DimensionMismatchError(
            f"{name} has dimension {arr.shape[1]}, expected {dimension}"
        )
    return arr


def check_nonzero_norm(vector, name="query"):
    norm = float(np.linalg.norm(vector))
    if not norm > 0.0:
        raise ZeroNormError(f"{name} has zero norm; cosine similarity is undefined")
    return norm


@contextmanager
def atomic_write(path, mode="wb"):
    """Write to a temp file next to ``path`` and rename it into place on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"encoding": "utf-8", "newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
