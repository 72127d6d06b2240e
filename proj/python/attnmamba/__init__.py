"""Attention Mamba multivariate forecasting toolkit."""

from ._core import (
    BidirectionalMode,
    Model,
    ModelConfig,
    Precision,
    ShapeError,
    adaptive_pool_1d,
    friedman_rank,
    fuse_pool,
    generate_synthetic,
    posthoc_from_ranks,
    run_cli,
    selective_scan,
)

__all__ = [
    "BidirectionalMode",
    "Model",
    "ModelConfig",
    "Precision",
    "ShapeError",
    "adaptive_pool_1d",
    "friedman_rank",
    "fuse_pool",
    "generate_synthetic",
    "posthoc_from_ranks",
    "run_cli",
    "selective_scan",
]
