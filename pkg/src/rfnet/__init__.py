"""Rotated-feature gating block, invariance losses, and a small training harness
on a self-contained numpy autodiff engine."""

from .tensor import Tensor, ShapeError, OverflowInComputeError, no_grad
from .rotation import AngleSet, RotatedStack, angle_set, rotate_map, build_rotated_stack
from .block import (RfnConfig, RfnParams, RfnOutput, attention_weights, init_rfn_params,
                    param_count, resume, rfn_forward, scale_stack)
from .losses import (LossConfig, LossReport, classification_loss, invariance_distance,
                     l_ri_full, l_ri_star, rbf_kernel, regression_loss, total_loss)
from .optim import Sgd, truncated_normal
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .rng import Prng

__version__ = "0.1.0"

__all__ = [
    "Tensor", "ShapeError", "OverflowInComputeError", "no_grad",
    "AngleSet", "RotatedStack", "angle_set", "rotate_map", "build_rotated_stack",
    "RfnConfig", "RfnParams", "RfnOutput", "attention_weights", "init_rfn_params",
    "param_count", "resume", "rfn_forward", "scale_stack",
    "LossConfig", "LossReport", "classification_loss", "invariance_distance",
    "l_ri_full", "l_ri_star", "rbf_kernel", "regression_loss", "total_loss",
    "Sgd", "truncated_normal", "GradCheckError", "GradCheckReport", "grad_check",
    "Prng",
]
