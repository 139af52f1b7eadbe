"""Convolutions (cross-correlation) via im2col + GEMM.

Columns are rebuilt in the backward pass instead of being kept alive, and
both passes walk the batch in chunks so the column buffer stays bounded.
"""
from __future__ import annotations

import math

import numpy as np

from .._kernels import col2im, im2col
from .tensor import ShapeError, Tensor, _result, as_tensor

COL_BUDGET_BYTES = 64 * 2**20


def _tuple(v, nd):
    return (v,) * nd if isinstance(v, int) else tuple(v)


def _padding(padding, kernel, stride):
    if padding == "same":
        if any(s != 1 for s in stride):
            raise ValueError("'same' padding needs stride 1")
        return tuple(((k - 1) // 2, k - 1 - (k - 1) // 2) for k in kernel)
    if padding == "valid":
        return tuple((0, 0) for _ in kernel)
    return tuple((p, p) for p in _tuple(padding, len(kernel)))


def _chunks(n: int, per_sample_bytes: int):
    step = max(1, COL_BUDGET_BYTES // max(per_sample_bytes, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _conv_nd(x, w, b, stride, padding, nd: int, op: str) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    unbatched = x.ndim == nd + 1
    if unbatched:
        x_data = x.data[None]
    elif x.ndim == nd + 2:
        x_data = x.data
    else:
        raise ShapeError(f"{op}: input must be [C,*S] or [N,C,*S] with {nd} spatial dims, got {x.shape}")
    if w.ndim != nd + 2 or w.shape[1] != x_data.shape[1]:
        raise ShapeError(f"{op}: kernel {w.shape} does not match input {x.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"{op}: bias {b.shape} does not match kernel {w.shape}")
    kernel = w.shape[2:]
    stride = _tuple(stride, nd)
    pads = _padding(padding, kernel, stride)
    n, c = x_data.shape[:2]
    f = w.shape[0]
    xpad = np.pad(x_data, ((0, 0), (0, 0)) + pads)
    out_sp = tuple((s - k) // st + 1 for s, k, st in zip(xpad.shape[2:], kernel, stride))
    if any(o < 1 for o in out_sp):
        raise ShapeError(f"{op}: kernel {kernel} larger than padded input {xpad.shape[2:]}")
    n_pos = math.prod(out_sp)
    w2 = w.data.reshape(f, -1)
    per_sample = w2.shape[1] * n_pos * 8

    out = np.empty((n, f, n_pos))
    for sl in _chunks(n, per_sample):
        out[sl] = np.matmul(w2, im2col(xpad[sl], kernel, stride))
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape((n, f) + out_sp)
    if unbatched:
        out = out[0]

    def backward(g):
        g = g.reshape(n, f, n_pos)
        gw = np.zeros_like(w2) if w.requires_grad else None
        gx = np.zeros_like(xpad) if x.requires_grad else None
        for sl in _chunks(n, per_sample):
            gs = g[sl]
            if gw is not None:
                cols = im2col(xpad[sl], kernel, stride)
                gw += np.tensordot(gs, cols, axes=([0, 2], [0, 2]))
            if gx is not None:
                gx[sl] = col2im(np.matmul(w2.T, gs), xpad[sl].shape, kernel, stride)
        if gx is not None:
            crop = (slice(None), slice(None)) + tuple(slice(lo, lo + s) for (lo, _), s in zip(pads, x_data.shape[2:]))
            gx = gx[crop]
            if unbatched:
                gx = gx[0]
        grads = [gx, None if gw is None else gw.reshape(w.shape)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, op)


def conv2d(x, w, b=None, stride=1, padding="same") -> Tensor:
    """``x`` [C,H,W] or [N,C,H,W], ``w`` [F,C,kh,kw] -> [(N,)F,H',W']."""
    return _conv_nd(x, w, b, stride, padding, 2, "conv2d")


def conv3d(x, w, b=None, stride=1, padding="same") -> Tensor:
    """``x`` [C,T,H,W] or [N,C,T,H,W], ``w`` [F,C,kt,kh,kw]."""
    return _conv_nd(x, w, b, stride, padding, 3, "conv3d")


def conv_transpose2d(x, w, b=None, stride=2) -> Tensor:
    """Transposed convolution without padding; ``w`` is [C_in, C_out, kh, kw].

    Output side is ``(H - 1) * stride + kh``; the adjoint of :func:`conv2d`
    with the same kernel read as [F=C_in, C=C_out, kh, kw].
    """
    x, w = as_tensor(x), as_tensor(w)
    unbatched = x.ndim == 3
    x_data = x.data[None] if unbatched else x.data
    if x_data.ndim != 4 or w.ndim != 4 or w.shape[0] != x_data.shape[1]:
        raise ShapeError(f"conv_transpose2d: kernel {w.shape} does not match input {x.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"conv_transpose2d: bias {b.shape} does not match kernel {w.shape}")
    stride = _tuple(stride, 2)
    kernel = w.shape[2:]
    n, cin, h, wd = x_data.shape
    cout = w.shape[1]
    out_shape = (n, cout, (h - 1) * stride[0] + kernel[0], (wd - 1) * stride[1] + kernel[1])
    w2 = w.data.reshape(cin, -1)
    xf = x_data.reshape(n, cin, h * wd)
    out = col2im(np.matmul(w2.T, xf), out_shape, kernel, stride)
    if b is not None:
        out += b.data[None, :, None, None]
    if unbatched:
        out = out[0]

    def backward(g):
        g4 = g[None] if unbatched else g
        cols = im2col(g4, kernel, stride)  # [N, C_out*K, H*W]
        gx = np.matmul(w2, cols).reshape(x_data.shape) if x.requires_grad else None
        if gx is not None and unbatched:
            gx = gx[0]
        gw = np.tensordot(xf, cols, axes=([0, 2], [0, 2])).reshape(w.shape) if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, "conv_transpose2d")
