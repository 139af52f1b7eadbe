"""Layers and the recurrent/attention building blocks used by the models."""
from __future__ import annotations

import math

import numpy as np

from . import init
from .conv import conv2d, conv3d, conv_transpose2d
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    layer_norm,
    matmul,
    mul,
    reshape,
    sigmoid,
    softmax,
    tanh,
    transpose,
)


class Module:
    """Container whose parameters are discovered from its attributes.

    Parameter names join attribute names with dots; list entries use their
    index, e.g. ``blocks.0.attn.qkv.weight``.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            yield from _named(value, prefix + name, False)

    def named_tensors(self, prefix: str = ""):
        """Parameters plus fixed tensors (buffers) held as attributes."""
        for name, value in vars(self).items():
            yield from _named(value, prefix + name, True)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"parameter names differ: missing {missing}, unexpected {unexpected}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} vs model shape {p.shape}")
        for name, p in own.items():
            p.data = np.array(state[name], dtype=np.float64)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _named(value, name, buffers):
    if isinstance(value, Tensor):
        if buffers or value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from (value.named_tensors if buffers else value.named_parameters)(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _named(item, f"{name}.{i}", buffers)


class Linear(Module):
    def __init__(self, rng, in_features: int, out_features: int, bias: bool = True, gain: float = math.sqrt(2.0)):
        self.weight = init.he_uniform(rng, (in_features, out_features), in_features, gain)
        self.bias = init.zeros((out_features,)) if bias else None

    def forward(self, x):
        y = matmul(x, self.weight)
        return y if self.bias is None else add(y, self.bias)


class Conv2d(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, kernel=3, stride=1, padding="same", gain=math.sqrt(2.0)):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.weight = init.he_uniform(rng, (out_ch, in_ch, kh, kw), in_ch * kh * kw, gain)
        self.bias = init.zeros((out_ch,))
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Conv3d(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, kernel=(3, 7, 7), padding="same", gain=math.sqrt(2.0)):
        kernel = (kernel,) * 3 if isinstance(kernel, int) else tuple(kernel)
        self.weight = init.he_uniform(rng, (out_ch, in_ch) + kernel, in_ch * math.prod(kernel), gain)
        self.bias = init.zeros((out_ch,))
        self.padding = padding

    def forward(self, x):
        return conv3d(x, self.weight, self.bias, 1, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int = 2, stride: int = 2):
        self.weight = init.he_uniform(rng, (in_ch, out_ch, kernel, kernel), in_ch)
        self.bias = init.zeros((out_ch,))
        self.stride = stride

    def forward(self, x):
        return conv_transpose2d(x, self.weight, self.bias, self.stride)


class LayerNorm(Module):
    """Layer normalisation over ``axes`` with a per-feature affine along ``axis``.

    For channel-first maps use ``axes=1, axis=1`` (normalise across channels
    at each position); for token sequences the defaults (last axis) apply.
    """

    def __init__(self, features: int, axes=-1, axis: int = -1, eps: float = 1e-5):
        self.gamma = init.ones((features,))
        self.beta = init.zeros((features,))
        self.axes, self.axis, self.eps = axes, axis, eps

    def forward(self, x):
        y = layer_norm(x, self.axes, self.eps)
        shape = [1] * x.ndim
        shape[self.axis] = -1
        return add(mul(y, reshape(self.gamma, tuple(shape))), reshape(self.beta, tuple(shape)))


# -- recurrent cells ---------------------------------------------------------

def _gates(z: Tensor, axis: int, hidden: int):
    idx = [slice(None)] * z.ndim

    def part(k):
        idx[axis] = slice(k * hidden, (k + 1) * hidden)
        return z[tuple(idx)]

    return sigmoid(part(0)), sigmoid(part(1)), tanh(part(2)), sigmoid(part(3))


def lstm_cell(x, h, c, w_ih, w_hh, b):
    """One LSTM step. ``x`` [N,D], ``h``/``c`` [N,H], weights [D,4H]/[H,4H], bias [4H].

    Gate order along the 4H axis: input, forget, cell candidate, output.
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    hidden = h.shape[-1]
    if w_ih.shape[-1] != 4 * hidden or w_hh.shape != (hidden, 4 * hidden):
        raise ShapeError(f"lstm_cell: weights {w_ih.shape}/{w_hh.shape} do not fit hidden size {hidden}")
    z = add(add(matmul(x, w_ih), matmul(h, w_hh)), b)
    i, f, g, o = _gates(z, -1, hidden)
    c_next = add(mul(f, c), mul(i, g))
    return mul(o, tanh(c_next)), c_next


def convlstm_cell(x, h, c, weight, bias):
    """One ConvLSTM step: gates come from a 'same' conv over ``[x, h]`` stacked on channels.

    ``x`` [N,C,H,W], ``h``/``c`` [N,Hc,H,W], ``weight`` [4Hc, C+Hc, k, k].
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    hidden = h.shape[1]
    z = conv2d(concat([x, h], axis=1), weight, bias, 1, "same")
    i, f, g, o = _gates(z, 1, hidden)
    c_next = add(mul(f, c), mul(i, g))
    return mul(o, tanh(c_next)), c_next


class LSTMCell(Module):
    def __init__(self, rng, input_size: int, hidden_size: int):
        self.w_ih = init.he_uniform(rng, (input_size, 4 * hidden_size), input_size, 1.0)
        self.w_hh = init.he_uniform(rng, (hidden_size, 4 * hidden_size), hidden_size, 1.0)
        self.bias = init.zeros((4 * hidden_size,))
        self.hidden_size = hidden_size

    def forward(self, x, h, c):
        return lstm_cell(x, h, c, self.w_ih, self.w_hh, self.bias)

    def run(self, seq: list[Tensor]) -> Tensor:
        """Many-to-one: consume ``seq`` ([N,D] per step) and return the last hidden state."""
        n = seq[0].shape[0]
        h = Tensor(np.zeros((n, self.hidden_size)))
        c = Tensor(np.zeros((n, self.hidden_size)))
        for x in seq:
            h, c = self.forward(x, h, c)
        return h


class ConvLSTMCell(Module):
    def __init__(self, rng, in_ch: int, hidden_ch: int, kernel: int = 3):
        fan_in = (in_ch + hidden_ch) * kernel * kernel
        self.weight = init.he_uniform(rng, (4 * hidden_ch, in_ch + hidden_ch, kernel, kernel), fan_in, 1.0)
        self.bias = init.zeros((4 * hidden_ch,))
        self.hidden_ch = hidden_ch

    def forward(self, x, h, c):
        return convlstm_cell(x, h, c, self.weight, self.bias)

    def run(self, seq: list[Tensor]) -> Tensor:
        n, _, hh, ww = seq[0].shape
        h = Tensor(np.zeros((n, self.hidden_ch, hh, ww)))
        c = Tensor(np.zeros((n, self.hidden_ch, hh, ww)))
        for x in seq:
            h, c = self.forward(x, h, c)
        return h


# -- attention and patch embedding -------------------------------------------

def multi_head_attention(x, w_qkv, b_qkv, w_out, b_out, heads: int, return_weights: bool = False):
    """Self-attention over ``x`` [N,L,d]; returns [N,L,d] (and weights [N,heads,L,L])."""
    x = as_tensor(x)
    n, length, d = x.shape
    if d % heads:
        raise ShapeError(f"embed dim {d} not divisible by {heads} heads")
    dh = d // heads
    qkv = add(matmul(x, w_qkv), b_qkv)
    qkv = transpose(reshape(qkv, (n, length, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = softmax(scores, axis=-1)
    ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (n, length, d))
    out = add(matmul(ctx, w_out), b_out)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    def __init__(self, rng, dim: int, heads: int):
        self.qkv = Linear(rng, dim, 3 * dim, gain=1.0)
        self.proj = Linear(rng, dim, dim, gain=1.0)
        self.heads = heads

    def forward(self, x, return_weights=False):
        return multi_head_attention(
            x, self.qkv.weight, self.qkv.bias, self.proj.weight, self.proj.bias, self.heads, return_weights
        )


def patch_embed_3d(chip, weight, bias, patch: int, tubelet: int = 1) -> Tensor:
    """Split ``chip`` [N,t,b,H,W] into tubelet x patch x patch cubes and project each.

    Tokens come out frame-major, then row, then column: [N, (t/tubelet)*(H/p)*(W/p), d].
    ``weight`` is [tubelet*b*p*p, d].
    """
    chip = as_tensor(chip)
    if chip.ndim == 4:
        chip = reshape(chip, (1,) + chip.shape)
    n, t, bands, hgt, wid = chip.shape
    if t % tubelet or hgt % patch or wid % patch:
        raise ShapeError(f"chip {chip.shape} not divisible into tubelet {tubelet} x patch {patch}")
    tt, hh, ww = t // tubelet, hgt // patch, wid // patch
    x = reshape(chip, (n, tt, tubelet, bands, hh, patch, ww, patch))
    x = transpose(x, (0, 1, 4, 6, 2, 3, 5, 7))
    x = reshape(x, (n, tt * hh * ww, tubelet * bands * patch * patch))
    return add(matmul(x, weight), bias)


class PatchEmbed3d(Module):
    def __init__(self, rng, bands: int, dim: int, patch: int = 16, tubelet: int = 1):
        fan_in = tubelet * bands * patch * patch
        self.weight = init.he_uniform(rng, (fan_in, dim), fan_in, 1.0)
        self.bias = init.zeros((dim,))
        self.patch, self.tubelet = patch, tubelet

    def forward(self, chip):
        return patch_embed_3d(chip, self.weight, self.bias, self.patch, self.tubelet)
