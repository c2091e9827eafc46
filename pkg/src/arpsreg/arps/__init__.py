from .losses import LossBreakdown, centroid_loss, registration_and_affine_loss, step_penalty, total_loss
from .network import (
    ArpsConfig,
    LayerTrace,
    NetworkOutput,
    arps_layer_forward,
    attend_pair,
    encode_points,
    gmr_solve_tensor,
    init_params,
    network_forward,
    predict,
    recenter,
    select_top_h,
    step_size,
)
from .train import TrainConfig, TrainResult, load_model, recall_on, save_model, train, write_curves

__all__ = [
    "ArpsConfig",
    "LayerTrace",
    "LossBreakdown",
    "NetworkOutput",
    "TrainConfig",
    "TrainResult",
    "arps_layer_forward",
    "attend_pair",
    "centroid_loss",
    "encode_points",
    "gmr_solve_tensor",
    "init_params",
    "load_model",
    "network_forward",
    "predict",
    "recall_on",
    "recenter",
    "registration_and_affine_loss",
    "save_model",
    "select_top_h",
    "step_penalty",
    "step_size",
    "total_loss",
    "train",
    "write_curves",
]
