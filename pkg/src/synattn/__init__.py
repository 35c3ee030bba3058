"""Desk-scale attention synergy lab.

Weight-modulated rotary position embeddings, source-to-target attention
sharing, a per-step editing measurement, and the adaptive schedule that
ties them together, all running on a deterministic toy transformer so
every number is reproducible and checkable against brute-force oracles.
"""

from ._version import __version__
from .attention import (
    AttentionOutput,
    BlockProjection,
    TokenStream,
    attention_map,
    grid_position_ids,
    merge_heads,
    self_attention,
    shared_attention,
    split_heads,
)
from .backbone import (
    FLUX_DEFAULT_GUIDANCE,
    FLUX_DEFAULT_STEPS,
    FLUX_SHARED_BLOCKS,
    BackboneConfig,
    BackboneParams,
    BlockParams,
    SplitMix64,
    block_forward,
    denoise_step,
    derive_seed,
    encode_prompt,
    fnv1a64,
    init_backbone,
    initial_noise,
)
from .measurement import (
    BlockSimilarity,
    DegenerateSimilarityError,
    StepRecord,
    Thresholds,
    adaptive_weight,
    block_similarity,
    editing_measurement,
    image_similarity,
    text_similarity,
)
from .numerics import ShapeError, cosine_similarity, matmul, softmax_rows
from .pipeline import (
    EditingTrace,
    NumericalAbortError,
    PipelineConfig,
    run_batch,
    run_edit,
)
from .rope import (
    RopeConfig,
    apply_rope,
    frequencies,
    oracle_rotation_matrix,
    rotate_tokens,
    rotation_angles,
    scaled_inner_product,
)

__all__ = [
    "__version__",
    "ShapeError",
    "matmul",
    "softmax_rows",
    "cosine_similarity",
    "RopeConfig",
    "frequencies",
    "rotation_angles",
    "apply_rope",
    "rotate_tokens",
    "oracle_rotation_matrix",
    "scaled_inner_product",
    "TokenStream",
    "BlockProjection",
    "AttentionOutput",
    "grid_position_ids",
    "split_heads",
    "merge_heads",
    "self_attention",
    "shared_attention",
    "attention_map",
    "Thresholds",
    "BlockSimilarity",
    "StepRecord",
    "DegenerateSimilarityError",
    "block_similarity",
    "text_similarity",
    "image_similarity",
    "editing_measurement",
    "adaptive_weight",
    "BackboneConfig",
    "BackboneParams",
    "BlockParams",
    "SplitMix64",
    "derive_seed",
    "fnv1a64",
    "FLUX_SHARED_BLOCKS",
    "FLUX_DEFAULT_STEPS",
    "FLUX_DEFAULT_GUIDANCE",
    "init_backbone",
    "encode_prompt",
    "initial_noise",
    "block_forward",
    "denoise_step",
    "PipelineConfig",
    "EditingTrace",
    "NumericalAbortError",
    "run_edit",
    "run_batch",
]
