"""Deterministic toy transformer backbone.

Stands in for a pretrained multimodal diffusion transformer at desk scale:
seeded pseudo-random projections, a hash-based prompt encoder, a stack of
attention+MLP blocks, and a single Euler-style denoising update. Everything
is a pure function of the configuration, so two runs with the same config
agree bit for bit.

Randomness is generated by splitmix64 streams. A stream's output sequence
is ``mix(seed + i * GAMMA)`` for i = 1, 2, ... where ``mix`` is the
splitmix64 finalizer and ``GAMMA = 0x9E3779B97F4A7C15``. Stream seeds are
derived by folding integer parts with :func:`derive_seed`; strings enter as
their 64-bit FNV-1a hash.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (
    AttentionOutput,
    BlockProjection,
    TokenStream,
    shared_attention,
)
from .numerics import ShapeError, matmul
from .rope import RopeConfig

__all__ = [
    "MASK64",
    "SplitMix64",
    "derive_seed",
    "fnv1a64",
    "BackboneConfig",
    "BlockParams",
    "BackboneParams",
    "FLUX_SHARED_BLOCKS",
    "FLUX_DEFAULT_STEPS",
    "FLUX_DEFAULT_GUIDANCE",
    "WEIGHT_SCALE",
    "init_backbone",
    "encode_prompt",
    "initial_noise",
    "block_forward",
    "denoise_step",
]

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Block set used for sharing at full scale (57-block models); only valid for
# configs with n_blocks >= 57. The toy default lives in BackboneConfig.
FLUX_SHARED_BLOCKS = frozenset({0, 7, 8, 9, 10, 18, 25, 28, 37, 42, 45, 50, 56})
# Full-scale sampler defaults, carried for config parity. The toy denoiser
# has no guidance path, so the scale is informational only.
FLUX_DEFAULT_STEPS = 50
FLUX_DEFAULT_GUIDANCE = 3.5

# Entry bound for the uniform weight initializer.
WEIGHT_SCALE = 0.05


def _mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Fold integer parts into one 64-bit stream seed (order-sensitive)."""
    h = 0
    for part in parts:
        h = _mix64((h + _GAMMA + (int(part) & MASK64)) & MASK64)
    return h


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 encoding of ``text``."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


class SplitMix64:
    """Deterministic splitmix64 stream with vectorized draws."""

    def __init__(self, seed: int) -> None:
        self._state = int(seed) & MASK64

    def next_uint(self) -> int:
        self._state = (self._state + _GAMMA) & MASK64
        return _mix64(self._state)

    def uniform(self, low: float, high: float, count: int) -> np.ndarray:
        """Next ``count`` floats, uniform in [low, high)."""
        idx = np.arange(1, count + 1, dtype=np.uint64)
        state = np.uint64(self._state) + idx * np.uint64(_GAMMA)
        z = state
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self._state = (self._state + count * _GAMMA) & MASK64
        unit = z.astype(np.float64) / 2.0**64
        return low + (high - low) * unit


@dataclass(frozen=True)
class BackboneConfig:
    """Shape and seeding of the toy backbone.

    Defaults give a 4-head model of width 64 on a 4x4 token grid with 8
    blocks, of which {0, 2, 5} share attention, denoised over 10 steps.
    """

    d_model: int = 64
    num_heads: int = 4
    head_dim: int = 16
    axis_dims: tuple[int, ...] = (4, 6, 6)
    n_blocks: int = 8
    shared_blocks: frozenset[int] = frozenset({0, 2, 5})
    n_txt_tokens: int = 4
    grid: tuple[int, int] = (4, 4)
    seed: int = 0
    n_steps: int = 10
    theta_base: float = 10000.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis_dims", tuple(int(d) for d in self.axis_dims))
        object.__setattr__(self, "shared_blocks", frozenset(int(b) for b in self.shared_blocks))
        object.__setattr__(self, "grid", (int(self.grid[0]), int(self.grid[1])))
        if self.d_model != self.num_heads * self.head_dim:
            raise ValueError(
                f"d_model {self.d_model} != num_heads {self.num_heads} "
                f"* head_dim {self.head_dim}"
            )
        if not all(0 <= b < self.n_blocks for b in self.shared_blocks):
            raise ValueError(
                f"shared_blocks {sorted(self.shared_blocks)} outside "
                f"[0, {self.n_blocks})"
            )
        if self.n_txt_tokens < 1:
            raise ValueError("need at least one text token")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.grid}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        # Validates head_dim / axis_dims / theta_base consistency.
        self.rope

    @property
    def rope(self) -> RopeConfig:
        return RopeConfig(
            head_dim=self.head_dim,
            axis_dims=self.axis_dims,
            theta_base=self.theta_base,
            num_heads=self.num_heads,
        )

    @property
    def n_img(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass(frozen=True)
class BlockParams:
    attn: BlockProjection
    mlp_in: np.ndarray
    mlp_out: np.ndarray


@dataclass(frozen=True)
class BackboneParams:
    config: BackboneConfig
    blocks: tuple[BlockParams, ...]


# Role index of each weight matrix inside a block's seeding scheme.
_ROLES = ("wq", "wk", "wv", "wo", "mlp_in", "mlp_out")


def _uniform_matrix(seed: int, rows: int, cols: int, scale: float) -> np.ndarray:
    gen = SplitMix64(seed)
    return gen.uniform(-scale, scale, rows * cols).reshape(rows, cols)


def init_backbone(config: BackboneConfig) -> BackboneParams:
    """Draw all block weights deterministically from the config seed.

    Matrix ``role`` (index r in wq, wk, wv, wo, mlp_in, mlp_out) of block b
    uses the stream seeded by ``derive_seed(seed, b, r)``; entries are
    uniform in [-WEIGHT_SCALE, WEIGHT_SCALE].
    """
    d = config.d_model
    blocks = []
    for b in range(config.n_blocks):
        mats = [
            _uniform_matrix(derive_seed(config.seed, b, r), d, d, WEIGHT_SCALE)
            for r in range(len(_ROLES))
        ]
        blocks.append(BlockParams(BlockProjection(*mats[:4]), mats[4], mats[5]))
    return BackboneParams(config=config, blocks=tuple(blocks))


def encode_prompt(prompt: str, config: BackboneConfig) -> np.ndarray:
    """Hash a prompt into an (n_txt_tokens, d_model) embedding matrix.

    Whitespace-split token i seeds its row's stream with
    ``derive_seed(fnv1a64(token))``; if the prompt has fewer tokens than
    ``n_txt_tokens``, row i is padded from ``derive_seed(fnv1a64(prompt), i)``.
    Extra tokens beyond ``n_txt_tokens`` are ignored. All entries are uniform
    in [-1, 1], so rows are never zero vectors in practice.
    """
    tokens = prompt.split()
    if not tokens:
        raise ValueError("prompt must contain at least one token")
    rows = []
    for i in range(config.n_txt_tokens):
        if i < len(tokens):
            seed = derive_seed(fnv1a64(tokens[i]))
        else:
            seed = derive_seed(fnv1a64(prompt), i)
        rows.append(SplitMix64(seed).uniform(-1.0, 1.0, config.d_model))
    return np.vstack(rows)


def initial_noise(config: BackboneConfig) -> np.ndarray:
    """Deterministic stand-in for the Gaussian initial state, uniform in [-1, 1]."""
    seed = derive_seed(config.seed, fnv1a64("noise"))
    gen = SplitMix64(seed)
    return gen.uniform(-1.0, 1.0, config.n_img * config.d_model).reshape(
        config.n_img, config.d_model
    )


def block_forward(
    stream: TokenStream,
    block_index: int,
    params: BackboneParams,
    w: float,
    shared_src: TokenStream | None = None,
) -> tuple[TokenStream, AttentionOutput]:
    """One block: attention, output projection, residual, 2-layer tanh MLP, residual.

    When ``shared_src`` is given, image keys/values come from that stream
    (the target side of a shared block); otherwise the block runs ordinary
    self-attention. Returns the updated stream and the raw pre-projection
    attention output for the measurement.
    """
    config = params.config
    if not 0 <= block_index < config.n_blocks:
        raise ValueError(f"block index {block_index} outside [0, {config.n_blocks})")
    bp = params.blocks[block_index]
    kv_source = shared_src if shared_src is not None else stream
    attn = shared_attention(stream, kv_source, bp.attn, config.rope, w)

    tokens = np.vstack([stream.text, stream.image])
    tokens = tokens + matmul(np.vstack([attn.txt, attn.img]), bp.attn.wo)
    tokens = tokens + matmul(np.tanh(matmul(tokens, bp.mlp_in)), bp.mlp_out)

    n_txt = stream.n_txt
    updated = TokenStream(
        text=tokens[:n_txt],
        image=tokens[n_txt:],
        grid=stream.grid,
        positions=stream.positions,
    )
    return updated, attn


def denoise_step(x: np.ndarray, f_out: np.ndarray, t: int, n_steps: int) -> np.ndarray:
    """Euler update toward the backbone output: x + (f_out - x) / n_steps."""
    if n_steps == 0:
        raise ValueError("n_steps must be nonzero")
    if not 1 <= t <= n_steps:
        raise ValueError(f"timestep {t} outside [1, {n_steps}]")
    x = np.asarray(x, dtype=np.float64)
    f_out = np.asarray(f_out, dtype=np.float64)
    if x.shape != f_out.shape:
        raise ShapeError(f"state shape {x.shape} != output shape {f_out.shape}")
    return x + (f_out - x) / n_steps
