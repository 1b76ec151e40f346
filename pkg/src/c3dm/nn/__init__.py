from .autograd import Var
from .io import WeightFormatError, WeightVersionError, load_checkpoint, load_params, save_params
from .model import (
    ModelConfig,
    ParamSet,
    count_params,
    denoiser_forward,
    encoder_forward,
    init_params,
    loss_and_grads,
    timestep_features,
)
from .optim import AdamState, adam_step

__all__ = [
    "Var",
    "ModelConfig",
    "ParamSet",
    "AdamState",
    "adam_step",
    "count_params",
    "denoiser_forward",
    "encoder_forward",
    "init_params",
    "loss_and_grads",
    "timestep_features",
    "save_params",
    "load_params",
    "load_checkpoint",
    "WeightFormatError",
    "WeightVersionError",
]
