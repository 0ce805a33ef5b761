"""Video-conditioned toy music generation: synthetic data, training and evaluation."""

from ._vidmus import (
    ContainerError,
    Error,
    InvalidArgument,
    IoError,
    Model,
    NumericError,
    compute_distance_sequence,
    default_config,
    generate_clip,
    mean_patch_similarity,
    read_clip,
    rhythm_recall,
    run_cli,
    semantic_proxy_predict,
)

__all__ = [
    "ContainerError",
    "Error",
    "InvalidArgument",
    "IoError",
    "Model",
    "NumericError",
    "compute_distance_sequence",
    "default_config",
    "generate_clip",
    "mean_patch_similarity",
    "read_clip",
    "rhythm_recall",
    "run_cli",
    "semantic_proxy_predict",
]
