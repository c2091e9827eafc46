from . import tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .layers import AttentionConfig, ParamStore, init_mha, init_mlp, mha_forward, mlp_forward
from .optim import AdamState, PlateauState, adam_step, lr_on_plateau
from .tensor import ShapeError, Tensor

__all__ = [
    "AdamState",
    "AttentionConfig",
    "GradCheckReport",
    "ParamStore",
    "PlateauState",
    "ShapeError",
    "Tensor",
    "adam_step",
    "grad_check",
    "init_mha",
    "init_mlp",
    "load_checkpoint",
    "lr_on_plateau",
    "mha_forward",
    "mlp_forward",
    "save_checkpoint",
    "tensor",
]
