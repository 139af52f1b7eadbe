"""Seeded parameter initialisation."""
import math

import numpy as np

from .tensor import Tensor


def he_uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = math.sqrt(2.0)) -> Tensor:
    """Uniform on ``[-b, b]`` with ``b = gain * sqrt(3 / fan_in)`` (He-uniform at the default gain)."""
    bound = gain * math.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)
