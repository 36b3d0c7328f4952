"""From-scratch convolutional recurrent forecaster with analytic gradients."""

from .cells import (
    ConvGRUCellParams,
    ConvLSTMCellParams,
    convgru_step,
    convlstm_step,
)
from .layers import (
    ConvLayerParams,
    ShapeError,
    conv2d_backward,
    conv2d_forward,
    relu,
    sigmoid,
)
from .model import (
    CELL_KINDS,
    Arch,
    GradStore,
    NetParams,
    ParamFormatError,
    load_params,
    model_backward,
    model_forward,
    params_from_bytes,
    params_to_bytes,
    save_params,
)

MINI_ARCH = Arch(enc=(2, 3), hidden=(4, 4), dec=(3, 2))

__all__ = [
    "CELL_KINDS", "MINI_ARCH", "Arch", "ConvGRUCellParams", "ConvLSTMCellParams",
    "ConvLayerParams", "GradStore", "NetParams", "ParamFormatError", "ShapeError",
    "conv2d_backward", "conv2d_forward", "convgru_step", "convlstm_step", "load_params",
    "model_backward", "model_forward", "params_from_bytes", "params_to_bytes", "relu",
    "save_params", "sigmoid",
]
