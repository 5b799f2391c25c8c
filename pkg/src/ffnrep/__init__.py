"""Structural reparameterization of channel-idle ViT feedforward layers."""

from .config import PRESETS, ModelConfig, preset_config
from .model import (
    IdleFfnInfer,
    IdleFfnTrain,
    Model,
    VanillaFfn,
    build_model,
    forward_model,
    freeze_model,
)
from .reparam import fold_batchnorm, merge_idle_path, reparameterize_ffn, reparameterize_model

__all__ = [
    "PRESETS",
    "IdleFfnInfer",
    "IdleFfnTrain",
    "Model",
    "ModelConfig",
    "VanillaFfn",
    "build_model",
    "fold_batchnorm",
    "forward_model",
    "freeze_model",
    "merge_idle_path",
    "preset_config",
    "reparameterize_ffn",
    "reparameterize_model",
]
