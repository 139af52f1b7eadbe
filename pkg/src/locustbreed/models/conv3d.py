"""Residual 3-D convolutional classifier over [channels, T, n, n] inputs."""
from __future__ import annotations

import numpy as np

from ..tensorkit import Conv3d, LayerNorm, Linear, Module, Tensor, add, mean, relu
from .base import BreedingModel, ModelConfig


def spatiotemporal_input(batch, include_static: bool) -> np.ndarray:
    """[N,T,n,n,v] (+ static [N,n,n,s] repeated over T) -> [N, v(+s), T, n, n]."""
    x = np.asarray(batch["temporal"]).transpose(0, 4, 1, 2, 3)
    if include_static:
        s = np.asarray(batch["static"]).transpose(0, 3, 1, 2)[:, :, None]
        x = np.concatenate([x, np.broadcast_to(s, (s.shape[0], s.shape[1], x.shape[2]) + s.shape[3:])], axis=1)
    return x


class ResidualBlock3d(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, kernel):
        self.conv_a = Conv3d(rng, in_ch, out_ch, kernel)
        self.norm_a = LayerNorm(out_ch, axes=1, axis=1)
        self.conv_b = Conv3d(rng, out_ch, out_ch, kernel)
        self.norm_b = LayerNorm(out_ch, axes=1, axis=1)
        self.skip = Conv3d(rng, in_ch, out_ch, (1, 1, 1)) if in_ch != out_ch else None

    def forward(self, x):
        y = relu(self.norm_a(self.conv_a(x)))
        y = self.norm_b(self.conv_b(y))
        return relu(add(y, x if self.skip is None else self.skip(x)))


class Conv3DNet(BreedingModel):
    architecture = "conv3d"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.rng_seed)
        h = config.hyper
        v = config.input_shapes["temporal"][3]
        in_ch = v + (config.input_shapes["static"][2] if h["include_static"] else 0)
        ch, kernel = h["channels"], tuple(h["kernel"])
        self.layers = [ResidualBlock3d(rng, in_ch, ch, kernel), ResidualBlock3d(rng, ch, ch, kernel)]
        self.head = Linear(rng, ch, 2, gain=1.0)

    def features(self, batch) -> Tensor:
        x = Tensor(spatiotemporal_input(batch, self.config.hyper["include_static"]))
        for layer in self.layers:
            x = layer(x)
        return mean(x, axis=(2, 3, 4))

    def logits(self, batch):
        return self.head(self.features(batch))
