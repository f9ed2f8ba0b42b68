from .arch import PRESETS, ArchSpec, LayerSpec, fcn, paper_arch, toy_arch
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import (
    NetworkParams,
    ShapeError,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    estimate_flow,
    forward,
    init_params,
    loss_and_grad,
    sgd_step,
    train,
)

__all__ = [
    "PRESETS", "ArchSpec", "LayerSpec", "fcn", "paper_arch", "toy_arch",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "NetworkParams", "ShapeError", "TrainConfig", "TrainingDiverged", "TrainResult",
    "estimate_flow", "forward", "init_params", "loss_and_grad", "sgd_step", "train",
]
