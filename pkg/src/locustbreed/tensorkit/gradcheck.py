"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_gradient(fn, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``fn(*tensors)`` with respect to each array."""
    grads = []
    for k, base in enumerate(arrays):
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + h
            fp = float(fn(*[Tensor(a) for a in arrays]).data)
            base[idx] = orig - h
            fm = float(fn(*[Tensor(a) for a in arrays]).data)
            base[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradient(fn, arrays: list[np.ndarray]) -> list[np.ndarray]:
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    fn(*tensors).backward()
    return [np.zeros_like(a) if t.grad is None else t.grad for a, t in zip(arrays, tensors)]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``; 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_gradients(fn, arrays, h: float = 1e-5) -> float:
    """Largest relative error between backprop and finite differences over all inputs."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    analytic = analytic_gradient(fn, arrays)
    numeric = numerical_gradient(fn, arrays, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
