"""Counterclockwise rotation of square feature maps and the rotated stack.

Angles that are multiples of a quarter turn are applied as exact pixel
permutations (no interpolation), so the default four-angle configuration is
group-exact. Every other angle uses inverse-mapping bilinear interpolation
about the grid center ((H-1)/2, (W-1)/2) with zero fill outside the source.
Both paths are linear in the input, so their gradients are the transposed
gather/scatter of the forward pass.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, _node, concat, stack

_HALF_PI = math.pi / 2.0
_plans: OrderedDict[tuple, tuple] = OrderedDict()
_PLAN_CACHE_LIMIT = 64  # angle-set rotations reuse a handful of plans; data
                        # generation churns through arbitrary angles


@dataclass(frozen=True)
class AngleSet:
    """The n uniformly spaced angles k * (2*pi/n), k = 0..n-1."""

    n: int
    angles: tuple[float, ...]

    def __iter__(self):
        return iter(self.angles)


def angle_set(n: int) -> AngleSet:
    if n < 1:
        raise ValueError(f"angle count must be >= 1, got {n}")
    step = 2.0 * math.pi / n
    return AngleSet(n=n, angles=tuple(k * step for k in range(n)))


def _quarter_turns(theta: float) -> int | None:
    """Number of exact 90-degree steps, or None if theta is not a multiple.

    The tolerance absorbs float32 storage of angles (quantization error on
    the turn count stays below 3e-7 for any angle within one full turn).
    """
    k = theta / _HALF_PI
    r = round(k)
    if abs(k - r) < 1e-6:
        return r % 4
    return None


def _bilinear_plan(h: int, w: int, theta: float):
    """Per output pixel: 4 flat source indices and weights (invalid -> weight 0)."""
    key = (h, w, float(theta))
    cached = _plans.get(key)
    if cached is not None:
        _plans.move_to_end(key)
        return cached
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    u = cc - cx
    v = rr - cy
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    src_c = (cx + u * cos_t - v * sin_t).reshape(-1)
    src_r = (cy + u * sin_t + v * cos_t).reshape(-1)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    dr = src_r - r0
    dc = src_c - c0
    idx = np.empty((4, h * w), dtype=np.int64)
    wgt = np.empty((4, h * w), dtype=np.float64)
    corners = ((r0, c0, (1 - dr) * (1 - dc)), (r0, c0 + 1, (1 - dr) * dc),
               (r0 + 1, c0, dr * (1 - dc)), (r0 + 1, c0 + 1, dr * dc))
    for m, (ri, ci, wm) in enumerate(corners):
        valid = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        idx[m] = np.clip(ri, 0, h - 1) * w + np.clip(ci, 0, w - 1)
        wgt[m] = np.where(valid, wm, 0.0)
    plan = (idx, wgt)
    _plans[key] = plan
    if len(_plans) > _PLAN_CACHE_LIMIT:
        _plans.popitem(last=False)
    return plan


def _spatial_axes(ndim: int) -> tuple[int, int]:
    # (H, W) / (H, W, C) put space first; (B, H, W, C) / (B, n, H, W, C) after the lead axes
    if ndim <= 3:
        return 0, 1
    return ndim - 3, ndim - 2


def rotate_array(arr: np.ndarray, theta: float) -> np.ndarray:
    """Rotate a plain array counterclockwise (no graph). Square spatial dims."""
    ax = _spatial_axes(arr.ndim)
    h, w = arr.shape[ax[0]], arr.shape[ax[1]]
    if h != w:
        raise ShapeError(f"rotation requires square spatial dims, got {h}x{w}")
    k = _quarter_turns(theta)
    if k is not None:
        return np.ascontiguousarray(np.rot90(arr, k, axes=ax))
    idx, wgt = _bilinear_plan(h, w, theta)
    moved = np.moveaxis(arr, ax, (0, 1))
    tail = moved.shape[2:]
    flat = moved.reshape(h * w, -1)
    wgt = wgt.astype(arr.dtype, copy=False)
    out = (wgt[0][:, None] * flat[idx[0]] + wgt[1][:, None] * flat[idx[1]]
           + wgt[2][:, None] * flat[idx[2]] + wgt[3][:, None] * flat[idx[3]])
    return np.moveaxis(out.reshape((h, w) + tail), (0, 1), ax)


def rotate_map(t: Tensor, theta: float) -> Tensor:
    """Differentiable counterclockwise rotation of a square spatial map.

    Accepts (H, W), (H, W, C) or (B, H, W, C); the output has the same shape.
    Exact quarter turns are pure permutations and bitwise-exact at theta = 0.
    """
    if not math.isfinite(theta):
        raise ValueError(f"rotation angle must be finite, got {theta}")
    ax = _spatial_axes(t.data.ndim)
    h, w = t.shape[ax[0]], t.shape[ax[1]]
    if h != w:
        raise ShapeError(f"rotation requires square spatial dims, got {h}x{w}")

    k = _quarter_turns(theta)
    if k is not None:
        if k == 0:
            def bwd0(out):
                def run():
                    t._accumulate(out.grad)
                return run
            return _node(t.data.copy(), (t,), bwd0, "rotate")

        def bwd(out):
            def run():
                t._accumulate(np.ascontiguousarray(np.rot90(out.grad, -k, axes=ax)))
            return run

        return _node(np.ascontiguousarray(np.rot90(t.data, k, axes=ax)), (t,), bwd, "rotate")

    idx, wgt = _bilinear_plan(h, w, theta)
    wgt = wgt.astype(t.dtype, copy=False)
    moved = np.moveaxis(t.data, ax, (0, 1))
    tail = moved.shape[2:]
    flat = moved.reshape(h * w, -1)
    out_flat = (wgt[0][:, None] * flat[idx[0]] + wgt[1][:, None] * flat[idx[1]]
                + wgt[2][:, None] * flat[idx[2]] + wgt[3][:, None] * flat[idx[3]])
    out_data = np.moveaxis(out_flat.reshape((h, w) + tail), (0, 1), ax)

    def bwd_bilinear(out):
        def run():
            g = np.moveaxis(out.grad, ax, (0, 1)).reshape(h * w, -1)
            dx = np.zeros_like(flat)
            for m in range(4):
                np.add.at(dx, idx[m], wgt[m][:, None] * g)
            t._accumulate(np.moveaxis(dx.reshape((h, w) + tail), (0, 1), ax))
        return run

    return _node(out_data, (t,), bwd_bilinear, "rotate")


@dataclass
class RotatedStack:
    """One rotated copy of the input per angle, plus the channel concatenation.

    per_angle[0] is the unrotated input; the concatenated map lays the copies
    out angle-major along the channel axis, so channel block k is per_angle[k].
    """

    per_angle: list[Tensor]
    concatenated: Tensor
    batched: bool

    @property
    def n(self) -> int:
        return len(self.per_angle)

    def stacked(self) -> Tensor:
        """All copies along a new angle axis: (n, H, W, C) or (B, n, H, W, C)."""
        return stack(self.per_angle, axis=1 if self.batched else 0)


def build_rotated_stack(x: Tensor, angles: AngleSet) -> RotatedStack:
    """Rotate x channel-wise by every angle in the set and concatenate."""
    if x.data.ndim not in (3, 4):
        raise ShapeError(f"expected (H, W, C) or (B, H, W, C), got {x.shape}")
    batched = x.data.ndim == 4
    per_angle = [rotate_map(x, theta) for theta in angles]
    return RotatedStack(per_angle=per_angle, concatenated=concat(per_angle, axis=-1),
                        batched=batched)
