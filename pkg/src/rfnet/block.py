"""The rotated-feature block: angle-wise gating plus resuming.

The encoder side rotates the input by every angle of the set, concatenates
the copies along channels, pools globally, and pushes the pooled vector
through a two-layer bottleneck ((n*C) -> (n*C)/r -> n) to produce one
sigmoid weight per angle. The decoder side reduces the weighted stack back
to the input shape (the rotation-invariant output) and the unweighted stack
likewise (the rotation-sensitive output), so the block drops into any model
without changing feature geometry.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import truncated_normal
from .rng import Prng
from .tensor import (Tensor, ShapeError, axis_scale, global_pool, linear, reduce_max,
                     reduce_sum, relu, reshape, sigmoid)
from .rotation import AngleSet, RotatedStack, angle_set, build_rotated_stack

POOLING_MODES = ("max", "avg")
RESUME_MODES = ("sum", "max")


@dataclass
class RfnConfig:
    """Block hyperparameters; defaults are the baseline ablation setting."""

    n: int = 4
    r: int = 8          # 0 disables the bottleneck (single gating layer)
    pooling: str = "max"
    resume: str = "sum"
    insertion_stage: int = 3
    uniform_omega: bool = False  # diagnostic switch: constant 0.5 gate weights

    def validate(self, channels: int | None = None):
        if self.n < 1:
            raise ValueError(f"angle count must be >= 1, got {self.n}")
        if self.r < 0:
            raise ValueError(f"reduction ratio must be >= 0, got {self.r}")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.resume not in RESUME_MODES:
            raise ValueError(f"resume must be one of {RESUME_MODES}, got {self.resume!r}")
        if channels is not None and self.r > 0 and (self.n * channels) % self.r != 0:
            raise ValueError(
                f"reduction ratio {self.r} does not divide n*C = {self.n * channels}")
        return self


@dataclass
class RfnParams:
    """Learnable gate weights. w2 is absent in the no-reduction (r = 0) variant."""

    w1: Tensor
    w2: Tensor | None

    def named(self, prefix: str = "rfn") -> dict[str, Tensor]:
        out = {f"{prefix}.w1": self.w1}
        if self.w2 is not None:
            out[f"{prefix}.w2"] = self.w2
        return out


@dataclass
class RfnOutput:
    ri: Tensor
    rs: Tensor
    weights: Tensor
    stack: RotatedStack = field(repr=False, default=None)


def param_count(config: RfnConfig, channels: int) -> int:
    """Number of gate parameters for the given input channel count."""
    config.validate(channels)
    nc = config.n * channels
    if config.r == 0:
        return nc * config.n
    hidden = nc // config.r
    return nc * hidden + hidden * config.n


def init_rfn_params(config: RfnConfig, channels: int, rng: Prng,
                    dtype=np.float32) -> RfnParams:
    config.validate(channels)
    nc = config.n * channels
    if config.r == 0:
        return RfnParams(w1=Tensor(truncated_normal(rng, (nc, config.n), dtype=dtype),
                                   requires_grad=True), w2=None)
    hidden = nc // config.r
    w1 = Tensor(truncated_normal(rng, (nc, hidden), dtype=dtype), requires_grad=True)
    w2 = Tensor(truncated_normal(rng, (hidden, config.n), dtype=dtype), requires_grad=True)
    return RfnParams(w1=w1, w2=w2)


def attention_weights(pooled: Tensor, params: RfnParams) -> Tensor:
    """Sigmoid gate weights, one per angle, from the pooled channel vector.

    Two linear layers with a ReLU between them; the no-reduction variant is a
    single linear map straight to the angle count. Output values are strictly
    inside (0, 1).
    """
    squeeze = pooled.data.ndim == 1
    g = reshape(pooled, (1, pooled.shape[0])) if squeeze else pooled
    if g.data.ndim != 2 or g.shape[1] != params.w1.shape[0]:
        raise ShapeError(f"pooled vector {pooled.shape} vs gate weights {params.w1.shape}")
    if params.w2 is None:
        out = sigmoid(linear(g, params.w1))
    else:
        out = sigmoid(linear(relu(linear(g, params.w1)), params.w2))
    return reshape(out, (out.shape[1],)) if squeeze else out


def scale_stack(weights: Tensor, stacked: Tensor) -> Tensor:
    """Multiply each angle slab by its weight.

    stacked is (n, H, W, C) with weights (n,), or (B, n, H, W, C) with (B, n).
    """
    axis = 0 if stacked.data.ndim == 4 else 1
    return axis_scale(stacked, weights, axis=axis)


def resume(stacked: Tensor, mode: str) -> Tensor:
    """Reduce the angle axis back to the input shape (sum or elementwise max).

    Max ties route the gradient to the lowest attaining angle index.
    """
    if stacked.data.ndim not in (4, 5):
        raise ShapeError(f"resume expects a stacked map, got {stacked.shape}")
    if stacked.shape[0 if stacked.data.ndim == 4 else 1] == 0:
        raise ShapeError("resume of an empty stack")
    axis = 0 if stacked.data.ndim == 4 else 1
    if mode == "sum":
        return reduce_sum(stacked, axis=axis)
    if mode == "max":
        return reduce_max(stacked, axis=axis)
    raise ValueError(f"unknown resume mode {mode!r}")


def rfn_forward(x: Tensor, params: RfnParams | None, config: RfnConfig,
                angles: AngleSet | None = None) -> RfnOutput:
    """Full block: rotate, gate, and resume into same-shape RI and RS maps.

    x is (H, W, C) or (B, H, W, C) with square spatial extent. The invariant
    output comes from the weighted stack, the sensitive one from the raw
    stack; the gate weights are returned for inspection.
    """
    if x.data.ndim not in (3, 4):
        raise ShapeError(f"expected (H, W, C) or (B, H, W, C), got {x.shape}")
    channels = x.shape[-1]
    config.validate(channels)
    if angles is None:
        angles = angle_set(config.n)
    rst = build_rotated_stack(x, angles)
    stacked = rst.stacked()

    if config.uniform_omega:
        wshape = (config.n,) if x.data.ndim == 3 else (x.shape[0], config.n)
        omega = Tensor(np.full(wshape, 0.5, dtype=x.dtype))
    else:
        if params is None:
            raise ValueError("gate parameters required unless uniform_omega is set")
        pooled = global_pool(rst.concatenated, config.pooling)
        omega = attention_weights(pooled, params)

    ri = resume(scale_stack(omega, stacked), config.resume)
    rs = resume(stacked, config.resume)
    return RfnOutput(ri=ri, rs=rs, weights=omega, stack=rst)
