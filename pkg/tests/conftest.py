import numpy as np
import pytest

from rfnet.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def t64(data, requires_grad=False):
    """Float64 tensor; gradient checks are meaningless at single precision."""
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


def rand_away_from(rng, shape, kink=0.0, margin=0.1, spread=1.0):
    """Uniform draws kept at least `margin` away from a kink point.

    Finite differences straddle non-differentiable points otherwise.
    """
    x = rng.uniform(margin, margin + spread, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return kink + sign * x
