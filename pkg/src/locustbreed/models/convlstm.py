"""Single-layer ConvLSTM classifier (many-to-one)."""
from __future__ import annotations

import numpy as np

from ..tensorkit import ConvLSTMCell, Linear, Tensor, mean, relu
from .base import BreedingModel, ModelConfig
from .conv3d import spatiotemporal_input


class ConvLSTMNet(BreedingModel):
    architecture = "convlstm"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.rng_seed)
        h = config.hyper
        v = config.input_shapes["temporal"][3]
        in_ch = v + (config.input_shapes["static"][2] if h["include_static"] else 0)
        self.cell = ConvLSTMCell(rng, in_ch, h["hidden"], h["kernel"])
        self.head = Linear(rng, h["hidden"], 2, gain=1.0)

    def last_hidden(self, batch) -> Tensor:
        x = spatiotemporal_input(batch, self.config.hyper["include_static"])  # [N,C,T,n,n]
        return self.cell.run([Tensor(np.ascontiguousarray(x[:, :, k])) for k in range(x.shape[2])])

    def logits(self, batch):
        return self.head(mean(relu(self.last_hidden(batch)), axis=(2, 3)))
