"""Multi-level multi-scale point transformer for point-cloud classification and segmentation."""

from ._core import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    IoError,
    Model,
    NumericError,
    ParseError,
    fps,
    gradcheck,
    interpolate,
    interpolation_plan,
    iou_scores,
    knn,
    load_dataset,
    multihead,
    overall_accuracy,
    psa,
    pyramid,
    run,
    synth,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DivergenceError",
    "IoError",
    "Model",
    "NumericError",
    "ParseError",
    "fps",
    "gradcheck",
    "interpolate",
    "interpolation_plan",
    "iou_scores",
    "knn",
    "load_dataset",
    "multihead",
    "overall_accuracy",
    "psa",
    "pyramid",
    "run",
    "synth",
]
