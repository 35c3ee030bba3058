"""Rotary position embedding with a continuous strength weight.

A position id is a real 3-vector (marker axis, row, column). Each attention
head of dimension ``head_dim`` is partitioned into contiguous segments, one
per axis, and each segment is further split into channel pairs
``(v[2k], v[2k+1])``. Pair ``k`` of the segment for axis ``a`` is rotated by
the angle

    w * pos[a] * theta_k,      theta_k = theta_base ** (-2k / axis_dim)

so the weight ``w`` scales every rotation angle linearly: ``w = 1`` is the
full embedding, ``w = 0`` is the identity, and intermediate values shrink
the effective relative displacement between tokens. Inner products of
rotated vectors depend on positions only through their difference.

Two independent code paths compute the same rotation: the fast pairwise
sin/cos path (:func:`apply_rope`, :func:`rotate_tokens`) and an explicit
block-diagonal rotation-matrix builder (:func:`oracle_rotation_matrix`)
kept as a brute-force cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError

__all__ = [
    "RopeConfig",
    "frequencies",
    "rotation_angles",
    "apply_rope",
    "rotate_tokens",
    "oracle_rotation_matrix",
    "scaled_inner_product",
]


@dataclass(frozen=True)
class RopeConfig:
    """Geometry of the rotary embedding.

    Defaults follow the full-scale FLUX layout: 24 heads of dimension 128,
    split into axis segments of 16 (sequence marker), 56 (row), 56 (column).
    """

    head_dim: int = 128
    axis_dims: tuple[int, ...] = (16, 56, 56)
    theta_base: float = 10000.0
    num_heads: int = 24

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis_dims", tuple(int(d) for d in self.axis_dims))
        if sum(self.axis_dims) != self.head_dim:
            raise ValueError(
                f"axis_dims {self.axis_dims} must sum to head_dim {self.head_dim}"
            )
        if any(d <= 0 or d % 2 for d in self.axis_dims):
            raise ValueError(f"every axis dim must be positive and even, got {self.axis_dims}")
        if not self.theta_base > 1.0:
            raise ValueError(f"theta_base must exceed 1, got {self.theta_base}")
        if self.num_heads < 1:
            raise ValueError(f"num_heads must be positive, got {self.num_heads}")

    @property
    def n_axes(self) -> int:
        return len(self.axis_dims)

    @property
    def d_model(self) -> int:
        return self.num_heads * self.head_dim


def frequencies(axis_dim: int, theta_base: float) -> np.ndarray:
    """Per-pair angular frequencies ``theta_base ** (-2k / axis_dim)``.

    Returns ``axis_dim / 2`` values, strictly decreasing from ``theta_0 = 1``.
    """
    if axis_dim <= 0 or axis_dim % 2:
        raise ValueError(f"axis_dim must be positive and even, got {axis_dim}")
    k = np.arange(axis_dim // 2, dtype=np.float64)
    return theta_base ** (-2.0 * k / axis_dim)


def _as_position(pos, config: RopeConfig) -> np.ndarray:
    p = np.asarray(pos, dtype=np.float64).reshape(-1)
    if p.shape != (config.n_axes,):
        raise ShapeError(
            f"position must have {config.n_axes} axes, got shape {p.shape}"
        )
    if not np.all(np.isfinite(p)):
        raise ValueError("position contains non-finite values")
    return p


def rotation_angles(pos, w: float, config: RopeConfig) -> np.ndarray:
    """Rotation angle of every channel pair, axis segments concatenated.

    The position ids are scaled by ``w`` first, then multiplied by the
    per-pair frequencies, so scaling the ids and scaling the angles are the
    same operation down to the float.
    """
    p = _as_position(pos, config)
    scaled = w * p
    parts = [
        scaled[i] * frequencies(d, config.theta_base)
        for i, d in enumerate(config.axis_dims)
    ]
    return np.concatenate(parts)


def _rotate_pairs(rows: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # rows (..., head_dim); cos/sin broadcastable to (..., head_dim // 2)
    x = rows[..., 0::2]
    y = rows[..., 1::2]
    out = np.empty_like(rows)
    out[..., 0::2] = x * cos - y * sin
    out[..., 1::2] = x * sin + y * cos
    return out


def apply_rope(v, pos, w: float, config: RopeConfig) -> np.ndarray:
    """Rotate one head-dim vector in place of its position, at strength ``w``.

    Norm-preserving; ``w = 0`` or an all-zero position returns ``v`` unchanged.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (config.head_dim,):
        raise ShapeError(f"vector length {v.shape} does not match head_dim {config.head_dim}")
    angles = rotation_angles(pos, w, config)
    return _rotate_pairs(v[None, :], np.cos(angles)[None, :], np.sin(angles)[None, :])[0]


def rotate_tokens(tokens, positions, w: float, config: RopeConfig) -> np.ndarray:
    """Apply the rotation to every row of an ``(n, num_heads * head_dim)`` matrix.

    Each row is split into ``num_heads`` contiguous head_dim chunks and every
    chunk receives the same rotation for that row's position.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    n = tokens.shape[0]
    if tokens.ndim != 2 or tokens.shape[1] != config.d_model:
        raise ShapeError(
            f"token matrix shape {tokens.shape} does not match "
            f"num_heads*head_dim = {config.d_model}"
        )
    if positions.shape != (n, config.n_axes):
        raise ShapeError(
            f"positions shape {positions.shape} does not match ({n}, {config.n_axes})"
        )
    scaled = w * positions
    angle_cols = [
        np.outer(scaled[:, i], frequencies(d, config.theta_base))
        for i, d in enumerate(config.axis_dims)
    ]
    angles = np.concatenate(angle_cols, axis=1)  # (n, head_dim // 2)
    cos = np.cos(angles)[:, None, :]
    sin = np.sin(angles)[:, None, :]
    heads = tokens.reshape(n, config.num_heads, config.head_dim)
    return _rotate_pairs(heads, cos, sin).reshape(n, config.d_model)


def oracle_rotation_matrix(pos, w: float, config: RopeConfig) -> np.ndarray:
    """Explicit block-diagonal rotation matrix for one head.

    Built entry by entry from 2x2 rotation blocks; deliberately naive so it
    can cross-check the pairwise path. The matrix is orthogonal and
    ``oracle_rotation_matrix(pos, w) == oracle_rotation_matrix(w * pos, 1)``.
    """
    angles = rotation_angles(pos, w, config)
    n = config.head_dim
    rot = np.zeros((n, n), dtype=np.float64)
    for k, phi in enumerate(angles):
        c = math.cos(phi)
        s = math.sin(phi)
        rot[2 * k, 2 * k] = c
        rot[2 * k, 2 * k + 1] = -s
        rot[2 * k + 1, 2 * k] = s
        rot[2 * k + 1, 2 * k + 1] = c
    return rot


def scaled_inner_product(q, k, pos_q, pos_k, w: float, config: RopeConfig) -> float:
    """Inner product of the two rotated vectors.

    Equals ``q @ oracle_rotation_matrix(pos_k - pos_q, w) @ k``: the value
    depends on the positions only through their displacement, scaled by ``w``.
    """
    rq = apply_rope(q, pos_q, w, config)
    rk = apply_rope(k, pos_k, w, config)
    return float(np.dot(rq, rk))
