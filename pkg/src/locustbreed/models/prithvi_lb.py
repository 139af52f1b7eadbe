"""ViT encoder over multi-temporal chips with a transposed-convolution segmentation decoder.

Parameter names (for importing externally trained encoder weights):

    patch_embed.weight        [tubelet*bands*patch*patch, embed_dim]
    patch_embed.bias          [embed_dim]
    blocks.<i>.norm1.gamma/beta, blocks.<i>.norm2.gamma/beta     [embed_dim]
    blocks.<i>.attn.qkv.weight [embed_dim, 3*embed_dim]   (q, k, v stacked on the output axis)
    blocks.<i>.attn.qkv.bias   [3*embed_dim]
    blocks.<i>.attn.proj.weight/bias   [embed_dim, embed_dim] / [embed_dim]
    blocks.<i>.mlp_in.weight/bias      [embed_dim, mlp_ratio*embed_dim]
    blocks.<i>.mlp_out.weight/bias     [mlp_ratio*embed_dim, embed_dim]
    norm.gamma/beta
    decoder.<j>.weight [in, out, 2, 2], decoder.<j>.bias, head.weight [2, in, 3, 3], head.bias

Linear weights are stored input-major ([in, out]); transpose torch-style [out, in] weights
before importing. ``pos_embed`` is a fixed sin-cos buffer.
"""
from __future__ import annotations

import math

import numpy as np

from ..tensorkit import (
    Conv2d,
    ConvTranspose2d,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    PatchEmbed3d,
    ShapeError,
    Tensor,
    add,
    gelu,
    masked_pixel_cross_entropy,
    mean,
    relu,
    reshape,
    transpose,
)
from .base import ConfigError, ModelConfig, PixelModel


def sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000 ** (np.arange(dim // 2) / (dim / 2.0))
    angles = positions[:, None] * omega[None]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def sincos_3d(dim: int, grid: tuple[int, int, int]) -> np.ndarray:
    """Fixed [t*h*w, dim] embedding; the dims are split between time, rows and columns."""
    t, h, w = grid
    d_t = 2 * (dim // 8)
    d_h = 2 * ((dim - d_t) // 4)
    d_w = dim - d_t - d_h
    tt, hh, ww = np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij")
    return np.concatenate(
        [sincos_1d(d_t, tt.ravel()), sincos_1d(d_h, hh.ravel()), sincos_1d(d_w, ww.ravel())], axis=1
    )


class TransformerBlock(Module):
    def __init__(self, rng, dim: int, heads: int, mlp_ratio: int):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.mlp_in = Linear(rng, dim, mlp_ratio * dim, gain=1.0)
        self.mlp_out = Linear(rng, mlp_ratio * dim, dim, gain=1.0)

    def forward(self, x):
        x = add(x, self.attn(self.norm1(x)))
        return add(x, self.mlp_out(gelu(self.mlp_in(self.norm2(x)))))


class PrithviLB(PixelModel):
    architecture = "prithvi_lb"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.rng_seed)
        h = config.hyper
        t, bands, hgt, wid = config.input_shapes["chip"]
        p, tub, d = h["patch"], h["tubelet"], h["embed_dim"]
        if hgt % p or wid % p or t % tub:
            raise ConfigError(f"chip {config.input_shapes['chip']} not divisible by patch {p} / tubelet {tub}")
        if 2 ** len(h["decoder_channels"]) != p:
            raise ConfigError(
                f"{len(h['decoder_channels'])} upsampling blocks cannot undo patch size {p}"
            )
        if d % h["heads"] or d % 2:
            raise ConfigError(f"embed_dim {d} must be even and divisible by {h['heads']} heads")
        self.grid = (t // tub, hgt // p, wid // p)
        self.patch_embed = PatchEmbed3d(rng, bands, d, p, tub)
        self.pos_embed = Tensor(sincos_3d(d, self.grid)[None])
        self.blocks = [TransformerBlock(rng, d, h["heads"], h["mlp_ratio"]) for _ in range(h["depth"])]
        self.norm = LayerNorm(d)
        self.decoder = []
        prev = d
        for ch in h["decoder_channels"]:
            self.decoder.append(ConvTranspose2d(rng, prev, ch, 2, 2))
            prev = ch
        self.head = Conv2d(rng, prev, 2, 3, gain=1.0)

    @property
    def n_tokens(self) -> int:
        return math.prod(self.grid)

    def encode(self, chip) -> Tensor:
        tokens = add(self.patch_embed(chip), self.pos_embed)
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens)

    def logits(self, batch):
        chip = np.asarray(batch["chip"])
        if chip.shape[1:] != self.config.input_shapes["chip"]:
            raise ShapeError(f"chip batch {chip.shape[1:]} vs configured {self.config.input_shapes['chip']}")
        n = chip.shape[0]
        tt, hh, ww = self.grid
        tokens = reshape(self.encode(chip), (n, tt, hh, ww, -1))
        x = transpose(mean(tokens, axis=1), (0, 3, 1, 2))
        for up in self.decoder:
            x = relu(up(x))
        return self.head(x)

    def loss(self, batch):
        return masked_pixel_cross_entropy(self.logits(batch), batch["mask"])

    def import_weights(self, weights: dict, strict: bool = False) -> list[str]:
        """Copy matching-name arrays into the model; shapes must agree exactly."""
        own = dict(self.named_tensors())
        unknown = sorted(set(weights) - set(own))
        if strict and unknown:
            raise KeyError(f"weights for unknown parameters {unknown}")
        loaded = []
        for name, arr in weights.items():
            if name not in own:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != own[name].shape:
                raise ShapeError(f"{name}: imported shape {arr.shape} vs model shape {own[name].shape}")
            loaded.append(name)
        for name in loaded:
            own[name].data = np.array(weights[name], dtype=np.float64)
        return sorted(loaded)
