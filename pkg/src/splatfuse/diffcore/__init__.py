"""Dense float64 arithmetic, taped reverse-mode gradients, AdamW and a gradient oracle."""

from . import ops
from .gradcheck import CheckError, GradReport, finite_diff_check
from .nn import (Layer, activation_forward, glorot_uniform, linear_forward, make_layer,
                 make_mlp, mlp_forward, mlp_parameters, softmax_forward)
from .optim import AdamW, AdamWState, OptimizerError, adamw_step, cosine_lr
from .rng import RngStream
from .tape import DimensionError, Parameter, Tape, Var, as_var

__all__ = [
    "ops", "CheckError", "GradReport", "finite_diff_check", "Layer", "activation_forward",
    "glorot_uniform", "linear_forward", "make_layer", "make_mlp", "mlp_forward",
    "mlp_parameters", "softmax_forward", "AdamW", "AdamWState", "OptimizerError",
    "adamw_step", "cosine_lr", "RngStream", "DimensionError", "Parameter", "Tape", "Var",
    "as_var",
]
