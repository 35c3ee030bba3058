"""Joint text+image multi-head attention for one transformer block.

A branch's state is a :class:`TokenStream`: text tokens, image tokens laid
out on a grid, and the per-image-token position ids. Attention always runs
over the concatenated [text; image] sequence. Image-token queries and keys
receive the rotary embedding at strength ``w``; text tokens carry all-zero
position ids and are never rotated.

:func:`shared_attention` is the editing primitive: target queries attend to
target text keys/values but to the *source* image keys/values, so target
tokens retrieve visual content from the source branch. With ``w = 0`` the
rotation is the identity and retrieval is purely semantic; with ``w = 1``
positional proximity shapes it fully. :func:`self_attention` is the same
computation with the stream as its own source.

Outputs are returned before the output projection is applied; the block
wrapper in :mod:`synattn.backbone` owns the projection and residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, matmul, softmax_rows
from .rope import RopeConfig, rotate_tokens

__all__ = [
    "TokenStream",
    "BlockProjection",
    "AttentionOutput",
    "grid_position_ids",
    "split_heads",
    "merge_heads",
    "self_attention",
    "shared_attention",
    "attention_map",
]


def grid_position_ids(height: int, width: int) -> np.ndarray:
    """Canonical position ids for a row-major grid: token r -> (0, r // width, r % width)."""
    if height < 1 or width < 1:
        raise ValueError(f"grid must be at least 1x1, got {height}x{width}")
    rows, cols = np.divmod(np.arange(height * width, dtype=np.float64), float(width))
    return np.column_stack([np.zeros(height * width), rows, cols])


@dataclass
class TokenStream:
    """One branch's token state: text tokens, grid image tokens, position ids.

    ``positions`` defaults to the canonical row-major grid layout; tests may
    pass a permuted table to move tokens together with their positions.
    """

    text: np.ndarray
    image: np.ndarray
    grid: tuple[int, int]
    positions: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.text = np.asarray(self.text, dtype=np.float64)
        self.image = np.asarray(self.image, dtype=np.float64)
        self.grid = (int(self.grid[0]), int(self.grid[1]))
        h, w = self.grid
        if self.text.ndim != 2 or self.image.ndim != 2:
            raise ShapeError("text and image token sets must be 2-D matrices")
        if self.image.shape[0] != h * w:
            raise ShapeError(
                f"{self.image.shape[0]} image tokens do not fill a {h}x{w} grid"
            )
        if self.text.shape[1] != self.image.shape[1]:
            raise ShapeError(
                f"text width {self.text.shape[1]} != image width {self.image.shape[1]}"
            )
        if self.positions is None:
            self.positions = grid_position_ids(h, w)
        else:
            self.positions = np.asarray(self.positions, dtype=np.float64)
            if self.positions.shape != (h * w, 3):
                raise ShapeError(
                    f"positions shape {self.positions.shape} != ({h * w}, 3)"
                )

    @property
    def n_txt(self) -> int:
        return self.text.shape[0]

    @property
    def n_img(self) -> int:
        return self.image.shape[0]

    @property
    def d_model(self) -> int:
        return self.text.shape[1]


@dataclass(frozen=True)
class BlockProjection:
    """Square projection matrices of one attention block."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self) -> None:
        for name in ("wq", "wk", "wv", "wo"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ShapeError(f"{name} must be square, got shape {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, m)


@dataclass(frozen=True)
class AttentionOutput:
    """Per-token attention output, split by modality, before the output projection."""

    txt: np.ndarray
    img: np.ndarray


def split_heads(tokens: np.ndarray, num_heads: int) -> np.ndarray:
    """(n, d_model) -> (num_heads, n, head_dim), contiguous chunks per head."""
    n, d = tokens.shape
    if d % num_heads:
        raise ShapeError(f"d_model {d} not divisible by {num_heads} heads")
    return tokens.reshape(n, num_heads, d // num_heads).transpose(1, 0, 2)


def merge_heads(heads: np.ndarray) -> np.ndarray:
    """Inverse of :func:`split_heads`."""
    nh, n, hd = heads.shape
    return heads.transpose(1, 0, 2).reshape(n, nh * hd)


def _check_stream(stream: TokenStream, rope: RopeConfig, name: str) -> None:
    if stream.d_model != rope.d_model:
        raise ShapeError(
            f"{name} stream width {stream.d_model} != num_heads*head_dim {rope.d_model}"
        )


def _projected_qkv(
    tgt: TokenStream,
    src: TokenStream,
    proj: BlockProjection,
    rope: RopeConfig,
    w: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Queries from the target, image keys/values from the source.

    Returns the full rotated query/key/value matrices over the concatenated
    [text; image] sequence plus the text-token count.
    """
    if tgt.grid != src.grid:
        raise ShapeError(f"grid mismatch: target {tgt.grid} vs source {src.grid}")
    _check_stream(tgt, rope, "target")
    _check_stream(src, rope, "source")
    n_txt = tgt.n_txt

    q = matmul(np.vstack([tgt.text, tgt.image]), proj.wq)
    q_img = rotate_tokens(q[n_txt:], tgt.positions, w, rope)
    q = np.vstack([q[:n_txt], q_img])

    k_txt = matmul(tgt.text, proj.wk)
    k_img = rotate_tokens(matmul(src.image, proj.wk), src.positions, w, rope)
    k = np.vstack([k_txt, k_img])

    v = np.vstack([matmul(tgt.text, proj.wv), matmul(src.image, proj.wv)])
    return q, k, v, n_txt


def _multi_head(q: np.ndarray, k: np.ndarray, v: np.ndarray, rope: RopeConfig) -> np.ndarray:
    scale = 1.0 / math.sqrt(rope.head_dim)
    qh = split_heads(q, rope.num_heads)
    kh = split_heads(k, rope.num_heads)
    vh = split_heads(v, rope.num_heads)
    outs = [
        matmul(softmax_rows(matmul(qh[h], kh[h].T) * scale), vh[h])
        for h in range(rope.num_heads)
    ]
    return merge_heads(np.stack(outs))


def shared_attention(
    tgt: TokenStream,
    src: TokenStream,
    proj: BlockProjection,
    rope: RopeConfig,
    w: float,
) -> AttentionOutput:
    """Attention of the target stream with image keys/values taken from the source.

    Queries: [target text; rotate(target image, w)]. Keys: [target text;
    rotate(source image, w)]. Values: [target text; source image]. At
    ``w = 0`` this is exactly the rotation-free sharing variant.
    """
    q, k, v, n_txt = _projected_qkv(tgt, src, proj, rope, w)
    out = _multi_head(q, k, v, rope)
    return AttentionOutput(txt=out[:n_txt], img=out[n_txt:])


def self_attention(
    stream: TokenStream,
    proj: BlockProjection,
    rope: RopeConfig,
    w: float,
) -> AttentionOutput:
    """Ordinary joint attention: the stream serves as its own key/value source."""
    return shared_attention(stream, stream, proj, rope, w)


def attention_map(
    tgt: TokenStream,
    src: TokenStream,
    proj: BlockProjection,
    rope: RopeConfig,
    w: float,
    query_cell: tuple[int, int],
) -> np.ndarray:
    """Where one target image query looks inside the source image.

    Takes the post-softmax attention weights of the query token at
    ``query_cell``, averaged over heads, restricted to source image keys and
    renormalized to sum to 1. Returned as a (height, width) grid.
    """
    h, wid = tgt.grid
    r, c = int(query_cell[0]), int(query_cell[1])
    if not (0 <= r < h and 0 <= c < wid):
        raise ValueError(f"query cell ({r}, {c}) outside {h}x{wid} grid")
    q, k, _, n_txt = _projected_qkv(tgt, src, proj, rope, w)
    query_row = n_txt + r * wid + c
    scale = 1.0 / math.sqrt(rope.head_dim)
    qh = split_heads(q, rope.num_heads)
    kh = split_heads(k, rope.num_heads)
    acc = np.zeros(h * wid, dtype=np.float64)
    for head in range(rope.num_heads):
        logits = matmul(qh[head][query_row : query_row + 1], kh[head].T) * scale
        weights = softmax_rows(logits)[0]
        acc += weights[n_txt:]
    acc /= rope.num_heads
    total = acc.sum()
    if total <= 0.0:
        raise ValueError("attention map has no mass on image keys")
    return (acc / total).reshape(h, wid)
