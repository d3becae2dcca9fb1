"""Small dense linear-algebra helpers shared by the whole library.

Matrices are 2-D float64 ndarrays (row-major), vectors 1-D float64 ndarrays.
These functions add the precondition checks the rest of the code relies on;
the arithmetic itself is delegated to NumPy.
"""

from __future__ import annotations

import numpy as np


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting anything else."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check.

    Raises
    ------
    ValueError
        If ``a.cols != b.rows``.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"inner dimensions do not match: {a.shape} x {b.shape}"
        )
    return a @ b


def sandwich_diag(j, var) -> np.ndarray:
    """Diagonal of ``J diag(var) J^T``.

    ``out[k] = sum_d J[k, d]^2 * var[d]``, the first-order propagation of a
    diagonal input covariance through the linear map ``J``.  The result is
    non-negative whenever ``var`` is.
    """
    j = as_matrix(j, "j")
    var = as_vector(var, "var")
    if j.shape[1] != var.shape[0]:
        raise ValueError(
            f"jacobian has {j.shape[1]} columns but var has length {var.shape[0]}"
        )
    if np.any(var < 0.0):
        raise ValueError("variances must be non-negative")
    return (j * j) @ var


def mean_and_variance(samples) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension sample mean and unbiased (N-1) sample variance.

    Accepts a sequence of equal-length vectors or an (n, d) array with one
    sample per row; at least two samples are required.

    Dimensions in which every sample holds the same value are treated as
    degenerate: their mean is that value and their variance exactly 0.0,
    so collapsed sample sets report zero spread with no float residue.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"samples must be a list of vectors, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError("need at least two samples for a variance estimate")
    mean = arr.mean(axis=0)
    var = arr.var(axis=0, ddof=1)
    constant = arr.max(axis=0) == arr.min(axis=0)
    if np.any(constant):
        mean = np.where(constant, arr[0], mean)
        var = np.where(constant, 0.0, var)
    return mean, var


def softmax(z) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z) -> np.ndarray:
    """Numerically stable log-softmax over the last axis."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
