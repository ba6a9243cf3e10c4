"""SGD with momentum and L2-in-gradient weight decay, plus weight init."""
from __future__ import annotations

import numpy as np

from .rng import Prng
from .tensor import ShapeError, Tensor


class Sgd:
    """Classic momentum SGD.

    Per parameter: v <- momentum * v + grad + weight_decay * param,
    then param <- param - lr * v. Velocity buffers persist across steps
    and always match their parameter's shape.
    """

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0005):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} vs parameter {name} {p.data.shape}")
            v = self.velocity[name]
            v *= self.momentum
            v += g
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data -= self.lr * v

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def truncated_normal(rng: Prng, shape, std: float = 0.01, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within +/- 2 std."""
    size = int(np.prod(shape))
    out = rng.normal(size)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype).reshape(shape)
