"""Dense float64 matrix primitives shared by every other module.

Everything here is a pure function over 2-D float64 arrays. The only
aggregation convention worth knowing: :func:`cosine_similarity` is the
unweighted mean of per-row cosines, and rows with zero norm contribute 0
instead of NaN.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "as_matrix",
    "matmul",
    "softmax_rows",
    "cosine_similarity",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce ``values`` to a finite 2-D float64 array (row-major)."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by "
            f"{b.shape[0]}x{b.shape[1]}: inner dimensions differ"
        )
    return a @ b


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    m = as_matrix(m)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cosine_similarity(a, b) -> float:
    """Mean over rows of the per-row cosine between ``a`` and ``b``.

    The denominator is computed as sqrt(|a_r|^2 * |b_r|^2), which makes the
    similarity of a matrix with itself exactly 1.0. Zero-norm rows contribute
    similarity 0. The result is clipped into [-1, 1].
    """
    a = as_matrix(a, "first argument")
    b = as_matrix(b, "second argument")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        raise ShapeError("cosine similarity needs at least one row")
    dots = np.einsum("ij,ij->i", a, b)
    sq_a = np.einsum("ij,ij->i", a, a)
    sq_b = np.einsum("ij,ij->i", b, b)
    denom = np.sqrt(sq_a * sq_b)
    sims = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0.0)
    return float(np.mean(np.clip(sims, -1.0, 1.0)))
