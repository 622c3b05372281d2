"""Prompt-free online few-shot segmentation pipeline.

Thin Python surface over the C++ core: tensor kernels, the steepest-descent
mapping-network solver, segmentation metrics, the synthetic benchmark
generator, and the train/evaluate entry points.
"""

from oflseg._core import (
    ConfigError,
    FormatError,
    IoError,
    ShapeError,
    StateError,
    ValidationError,
    __version__,
    apply_mapping,
    attention,
    avg_hausdorff,
    confidence,
    conv2d,
    cosine_similarity,
    dice,
    evaluate,
    fit_mapping,
    gen_synthetic,
    losses,
    read_tensor,
    run_cli,
    train,
    write_tensor,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "IoError",
    "ShapeError",
    "StateError",
    "ValidationError",
    "__version__",
    "apply_mapping",
    "attention",
    "avg_hausdorff",
    "confidence",
    "conv2d",
    "cosine_similarity",
    "dice",
    "evaluate",
    "fit_mapping",
    "gen_synthetic",
    "losses",
    "read_tensor",
    "run_cli",
    "train",
    "write_tensor",
]
