"""Small conv backbone with the rotated-feature block and two heads.

Three 3x3 conv stages (1 -> 8 -> 16 -> 16 channels, strides 2/2/1) take a
32x32 grayscale image to an 8x8x16 map. The block sits after a configurable
stage; any stages past the insertion point run on the invariant and
sensitive maps separately with shared kernels. The invariant map feeds only
the classifier head, the sensitive map only the sin/cos orientation head.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .block import RfnConfig, RfnParams, init_rfn_params, param_count, rfn_forward
from .optim import truncated_normal
from .rng import Prng
from .tensor import Tensor, conv2d, linear, relu, reshape


@dataclass
class ModelSpec:
    image_size: int = 32
    in_channels: int = 1
    num_classes: int = 4
    backbone_channels: tuple[int, ...] = (8, 16, 16)
    backbone_strides: tuple[int, ...] = (2, 2, 1)
    kernel: int = 3
    block: str = "rfn"  # or "identity": pass-through baseline, both heads share X
    rfn: RfnConfig = field(default_factory=RfnConfig)
    init_std: float = 0.01

    def validate(self):
        if len(self.backbone_channels) != len(self.backbone_strides):
            raise ValueError("backbone channel and stride lists must align")
        if self.block not in ("rfn", "identity"):
            raise ValueError(f"block must be 'rfn' or 'identity', got {self.block!r}")
        if self.block == "rfn":
            if not 1 <= self.rfn.insertion_stage <= len(self.backbone_channels):
                raise ValueError(
                    f"insertion stage {self.rfn.insertion_stage} outside backbone "
                    f"with {len(self.backbone_channels)} stages")
            self.rfn.validate(self.backbone_channels[self.rfn.insertion_stage - 1])
        return self

    def stage_sizes(self) -> list[int]:
        """Spatial extent after each stage (3x3 kernels, padding 1)."""
        sizes = []
        s = self.image_size
        for stride in self.backbone_strides:
            s = (s + 2 - self.kernel) // stride + 1
            sizes.append(s)
        return sizes


@dataclass
class ForwardPass:
    logits: Tensor
    orientation: Tensor
    ri: Tensor       # block invariant output, before any remaining stages
    rs: Tensor
    features: Tensor  # block input (backbone output at the insertion stage)
    weights: Tensor | None


class Model:
    def __init__(self, spec: ModelSpec, seed: int):
        spec.validate()
        self.spec = spec
        self.seed = seed
        rng = Prng(seed).spawn(0x11)
        self.params: dict[str, Tensor] = {}

        cin = spec.in_channels
        for i, cout in enumerate(spec.backbone_channels):
            kern = truncated_normal(rng, (spec.kernel, spec.kernel, cin, cout),
                                    std=spec.init_std)
            self.params[f"backbone.conv{i + 1}"] = Tensor(kern, requires_grad=True)
            cin = cout

        if spec.block == "rfn":
            channels = spec.backbone_channels[spec.rfn.insertion_stage - 1]
            self.rfn_params = init_rfn_params(spec.rfn, channels, rng)
            self.params.update(self.rfn_params.named())
        else:
            self.rfn_params = None

        feat = spec.stage_sizes()[-1] ** 2 * spec.backbone_channels[-1]
        self.feature_dim = feat
        self.params["head.cls"] = Tensor(truncated_normal(rng, (feat, spec.num_classes),
                                                          std=spec.init_std),
                                         requires_grad=True)
        self.params["head.reg"] = Tensor(truncated_normal(rng, (feat, 2),
                                                          std=spec.init_std),
                                         requires_grad=True)

    @property
    def insertion(self) -> int:
        if self.spec.block == "rfn":
            return self.spec.rfn.insertion_stage
        return len(self.spec.backbone_channels)

    def _stage(self, t: Tensor, i: int) -> Tensor:
        k = self.params[f"backbone.conv{i + 1}"]
        return relu(conv2d(t, k, stride=self.spec.backbone_strides[i], padding=1))

    def stem(self, images: Tensor) -> Tensor:
        """Backbone stages up to and including the insertion stage."""
        t = images
        for i in range(self.insertion):
            t = self._stage(t, i)
        return t

    def tail(self, t: Tensor) -> Tensor:
        for i in range(self.insertion, len(self.spec.backbone_channels)):
            t = self._stage(t, i)
        return t

    def block_apply(self, features: Tensor):
        """(ri, rs, weights) of the block, or the pass-through baseline."""
        if self.spec.block == "identity":
            return features, features, None
        out = rfn_forward(features, self.rfn_params, self.spec.rfn)
        return out.ri, out.rs, out.weights

    def forward(self, images: Tensor) -> ForwardPass:
        feats = self.stem(images)
        ri, rs, weights = self.block_apply(feats)
        ri_t = self.tail(ri)
        rs_t = self.tail(rs)
        bsz = images.shape[0]
        logits = linear(reshape(ri_t, (bsz, self.feature_dim)), self.params["head.cls"])
        orient = linear(reshape(rs_t, (bsz, self.feature_dim)), self.params["head.reg"])
        return ForwardPass(logits=logits, orientation=orient, ri=ri, rs=rs,
                           features=feats, weights=weights)

    def count_params(self) -> int:
        return sum(int(p.data.size) for p in self.params.values())

    def block_param_count(self) -> int:
        if self.spec.block != "rfn":
            return 0
        channels = self.spec.backbone_channels[self.spec.rfn.insertion_stage - 1]
        return param_count(self.spec.rfn, channels)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, tensors: dict[str, np.ndarray]):
        """Validate the complete name/shape map before touching any parameter."""
        own = {name: p.data.shape for name, p in self.params.items()}
        theirs = {name: t.shape for name, t in tensors.items()}
        if own != theirs:
            missing = sorted(set(own) - set(theirs))
            extra = sorted(set(theirs) - set(own))
            shapes = sorted(k for k in own.keys() & theirs.keys() if own[k] != theirs[k])
            raise ValueError("architecture mismatch: "
                             f"missing={missing} unexpected={extra} shape={shapes}")
        for name, p in self.params.items():
            p.data = tensors[name].astype(p.data.dtype, copy=True)
