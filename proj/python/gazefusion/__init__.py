"""Gaze estimation with transformer feature fusion and per-dataset adaptation heads."""

from ._core import (
    DatasetSpec,
    GazeModel,
    ModelConfig,
    TrainConfig,
    angular_error_deg,
    cli,
    default_specs,
    generate,
    grad_check,
    l1_loss,
    lr_at,
    param_budget,
    render_face,
    train,
)

__all__ = [
    "DatasetSpec",
    "GazeModel",
    "ModelConfig",
    "TrainConfig",
    "angular_error_deg",
    "cli",
    "default_specs",
    "generate",
    "grad_check",
    "l1_loss",
    "lr_at",
    "param_budget",
    "render_face",
    "train",
]
