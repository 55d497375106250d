from .checkpoint import ManifestMismatch, load_checkpoint, read_header, save_checkpoint
from .gradcheck import gradient_check
from .loss import forecast_loss, gaussian_nll
from .model import (
    Batch,
    Forecaster,
    ModelConfig,
    WindowTensors,
    build_model,
    collate,
    predict,
    window_items,
    window_tensors,
)
from .train import OptimConfig, TrainingDiverged, TrainState, evaluate_loss, new_state, overfit_batch, train

__all__ = [
    "Batch", "Forecaster", "ManifestMismatch", "ModelConfig", "OptimConfig", "TrainState",
    "TrainingDiverged", "WindowTensors", "build_model", "collate", "evaluate_loss", "forecast_loss",
    "gaussian_nll", "gradient_check", "load_checkpoint", "new_state", "overfit_batch", "predict",
    "read_header", "save_checkpoint", "train", "window_items", "window_tensors",
]
