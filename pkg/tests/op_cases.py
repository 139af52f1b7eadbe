"""Gradient-check cases: one entry per differentiable op.

Each builder takes a Generator and returns ``(fn, arrays)`` where ``fn`` maps
tensors to a scalar. Non-scalar ops are reduced with a fixed random
projection so every output element contributes to the check.
"""
from __future__ import annotations

import numpy as np

import locustbreed.tensorkit as tk
from locustbreed.tensorkit import Tensor


def _proj(rng, fn):
    cache = {}

    def scalar(*ts):
        out = fn(*ts)
        if "r" not in cache:
            cache["r"] = rng.normal(size=out.shape)
        return tk.sum_(tk.mul(out, Tensor(cache["r"])))

    return scalar


def _n(rng, *shape):
    return rng.normal(size=shape)


def _pos(rng, *shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _away_from_zero(rng, *shape):
    x = rng.uniform(0.2, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _mask(rng, n, h, w):
    m = rng.integers(0, 2, size=(n, h, w)).astype(np.uint8)
    m[rng.uniform(size=m.shape) < 0.4] = tk.IGNORE
    m[0, 0, 0] = 1
    return m


CASES = {
    "add": lambda r: (_proj(r, tk.add), [_n(r, 3, 4), _n(r, 4)]),
    "sub": lambda r: (_proj(r, tk.sub), [_n(r, 2, 3, 1), _n(r, 3, 4)]),
    "mul": lambda r: (_proj(r, tk.mul), [_n(r, 3, 4), _n(r, 3, 1)]),
    "div": lambda r: (_proj(r, tk.div), [_n(r, 3, 4), _away_from_zero(r, 4)]),
    "neg": lambda r: (_proj(r, lambda a: -a), [_n(r, 5)]),
    "relu": lambda r: (_proj(r, tk.relu), [_away_from_zero(r, 4, 5)]),
    "sigmoid": lambda r: (_proj(r, tk.sigmoid), [3 * _n(r, 4, 5)]),
    "tanh": lambda r: (_proj(r, tk.tanh), [_n(r, 4, 5)]),
    "exp": lambda r: (_proj(r, tk.exp), [_n(r, 4, 5)]),
    "log": lambda r: (_proj(r, tk.log), [_pos(r, 4, 5)]),
    "gelu": lambda r: (_proj(r, tk.gelu), [2 * _n(r, 4, 5)]),
    "matmul": lambda r: (_proj(r, tk.matmul), [_n(r, 2, 3, 4), _n(r, 4, 5)]),
    "sum": lambda r: (_proj(r, lambda a: tk.sum_(a, axis=(0, 2))), [_n(r, 2, 3, 4)]),
    "sum_keepdims": lambda r: (_proj(r, lambda a: tk.sum_(a, axis=1, keepdims=True)), [_n(r, 2, 3, 4)]),
    "mean": lambda r: (_proj(r, lambda a: tk.mean(a, axis=-1)), [_n(r, 3, 5)]),
    "softmax": lambda r: (_proj(r, lambda a: tk.softmax(a, axis=1)), [_n(r, 3, 4)]),
    "log_softmax": lambda r: (_proj(r, lambda a: tk.log_softmax(a, axis=0)), [_n(r, 3, 4)]),
    "layer_norm": lambda r: (_proj(r, lambda a: tk.layer_norm(a, axes=(1, 2))), [_n(r, 2, 3, 4)]),
    "reshape": lambda r: (_proj(r, lambda a: tk.reshape(a, (4, -1))), [_n(r, 2, 3, 4)]),
    "transpose": lambda r: (_proj(r, lambda a: tk.transpose(a, (2, 0, 1))), [_n(r, 2, 3, 4)]),
    "concat": lambda r: (_proj(r, lambda a, b: tk.concat([a, b], axis=1)), [_n(r, 2, 3), _n(r, 2, 2)]),
    "stack": lambda r: (_proj(r, lambda a, b: tk.stack([a, b], axis=1)), [_n(r, 2, 3), _n(r, 2, 3)]),
    "getitem_slice": lambda r: (_proj(r, lambda a: a[1:, ::2]), [_n(r, 3, 5)]),
    "getitem_fancy": lambda r: (_proj(r, lambda a: tk.getitem(a, (np.array([0, 2, 0]), np.array([1, 1, 1])))), [_n(r, 3, 4)]),
    "pad": lambda r: (_proj(r, lambda a: tk.pad(a, ((0, 0), (1, 2), (2, 1)))), [_n(r, 2, 3, 3)]),
    "avg_pool2d": lambda r: (_proj(r, lambda a: tk.avg_pool2d(a, 2)), [_n(r, 2, 4, 6)]),
    "conv2d": lambda r: (_proj(r, lambda x, w, b: tk.conv2d(x, w, b)), [_n(r, 2, 2, 5, 5), _n(r, 3, 2, 3, 3), _n(r, 3)]),
    "conv2d_valid_stride": lambda r: (
        _proj(r, lambda x, w: tk.conv2d(x, w, stride=2, padding=0)), [_n(r, 1, 2, 7, 6), _n(r, 2, 2, 3, 2)]),
    "conv3d": lambda r: (_proj(r, lambda x, w, b: tk.conv3d(x, w, b)), [_n(r, 1, 2, 3, 4, 4), _n(r, 2, 2, 3, 3, 3), _n(r, 2)]),
    "conv_transpose2d": lambda r: (
        _proj(r, lambda x, w, b: tk.conv_transpose2d(x, w, b, stride=2)), [_n(r, 2, 3, 3, 3), _n(r, 3, 2, 2, 2), _n(r, 2)]),
    "cross_entropy": lambda r: ((lambda z: tk.cross_entropy(z, np.array([0, 1, 1, 0]))), [_n(r, 4, 2)]),
    "masked_pixel_cross_entropy": lambda r: (
        (lambda z, m=_mask(r, 2, 3, 3): tk.masked_pixel_cross_entropy(z, m)), [_n(r, 2, 2, 3, 3)]),
    "hinge": lambda r: ((lambda s: tk.hinge(s, np.array([0, 1, 1, 0, 1]))), [_away_from_zero(r, 5, 1) * 2]),
    "lstm_cell": lambda r: (
        _proj(r, lambda x, h, c, wi, wh, b: tk.concat(list(tk.lstm_cell(x, h, c, wi, wh, b)), axis=1)),
        [_n(r, 2, 3), _n(r, 2, 4), _n(r, 2, 4), _n(r, 3, 16), _n(r, 4, 16), _n(r, 16)]),
    "convlstm_cell": lambda r: (
        _proj(r, lambda x, h, c, w, b: tk.concat(list(tk.convlstm_cell(x, h, c, w, b)), axis=1)),
        [_n(r, 1, 2, 4, 4), _n(r, 1, 2, 4, 4), _n(r, 1, 2, 4, 4), 0.5 * _n(r, 8, 4, 3, 3), _n(r, 8)]),
    "multi_head_attention": lambda r: (
        _proj(r, lambda x, wq, bq, wo, bo: tk.multi_head_attention(x, wq, bq, wo, bo, heads=2)),
        [_n(r, 2, 3, 4), 0.5 * _n(r, 4, 12), _n(r, 12), _n(r, 4, 4), _n(r, 4)]),
    "patch_embed_3d": lambda r: (
        _proj(r, lambda c, w, b: tk.patch_embed_3d(c, w, b, patch=2, tubelet=1)),
        [_n(r, 1, 2, 2, 4, 4), _n(r, 8, 3), _n(r, 3)]),
}


def op_case(name: str, seed: int):
    return CASES[name](np.random.default_rng(seed))
