"""Two-branch model: per-step conv encoder + many-to-one LSTM, and a static conv encoder."""
from __future__ import annotations

import numpy as np

from ..tensorkit import Conv2d, Linear, LSTMCell, Module, Tensor, concat, relu, reshape
from .base import BreedingModel, ModelConfig


class ConvEncoder(Module):
    """n x n x channels grid -> feature vector: stacked 3x3 convs, flatten, linear."""

    def __init__(self, rng, in_ch: int, channels, n: int, feature_dim: int):
        self.convs = []
        prev = in_ch
        for ch in channels:
            self.convs.append(Conv2d(rng, prev, ch, 3))
            prev = ch
        self.fc = Linear(rng, prev * n * n, feature_dim)

    def forward(self, x):
        for conv in self.convs:
            x = relu(conv(x))
        return relu(self.fc(reshape(x, (x.shape[0], -1))))


class PlanLB(BreedingModel):
    architecture = "plan_lb"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.rng_seed)
        h = config.hyper
        t, n, _, v = config.input_shapes["temporal"]
        s = config.input_shapes["static"][2]
        self.temporal_encoder = ConvEncoder(rng, v, h["encoder_channels"], n, h["feature_dim"])
        self.lstm = LSTMCell(rng, h["feature_dim"], h["lstm_hidden"])
        self.static_encoder = ConvEncoder(rng, s, h["encoder_channels"], n, h["feature_dim"])
        self.head = Linear(rng, h["lstm_hidden"] + h["feature_dim"], 2, gain=1.0)

    def logits(self, batch):
        temporal = np.asarray(batch["temporal"])
        nb, t, n, _, v = temporal.shape
        frames = Tensor(temporal.reshape(nb * t, n, n, v).transpose(0, 3, 1, 2))
        feats = reshape(self.temporal_encoder(frames), (nb, t, -1))
        h_last = self.lstm.run([feats[:, k, :] for k in range(t)])
        static = Tensor(np.asarray(batch["static"]).transpose(0, 3, 1, 2))
        return self.head(concat([h_last, self.static_encoder(static)], axis=1))
