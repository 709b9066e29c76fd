"""From-scratch differentiable building blocks for the hybrid predictor."""

from .tensor import Tensor, concat, no_grad, prelu, softmax, stack_rows
from .layers import (
    FUSED_INPUT_DIM,
    GRU_INPUT_DIM,
    HIDDEN_SIZE,
    KinematicPredictor,
    NUM_LAYERS,
    PLAIN_INPUT_DIM,
    RegimePredictor,
    StackedRecurrent,
    WINDOW,
    params_equal,
    snapshot_params,
    xavier_uniform,
)
from .losses import (
    label_smoothed_ce,
    regression_loss,
    single_step_mse,
    smoothed_ce_floor,
    smoothed_targets,
)
from .optim import Adam, adam_step
from .gradcheck import GradCheckReport, grad_check
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "FUSED_INPUT_DIM",
    "GRU_INPUT_DIM",
    "GradCheckReport",
    "HIDDEN_SIZE",
    "KinematicPredictor",
    "NUM_LAYERS",
    "PLAIN_INPUT_DIM",
    "RegimePredictor",
    "StackedRecurrent",
    "Tensor",
    "WINDOW",
    "adam_step",
    "concat",
    "grad_check",
    "label_smoothed_ce",
    "load_checkpoint",
    "no_grad",
    "params_equal",
    "prelu",
    "regression_loss",
    "save_checkpoint",
    "single_step_mse",
    "smoothed_ce_floor",
    "smoothed_targets",
    "snapshot_params",
    "softmax",
    "stack_rows",
    "xavier_uniform",
]
