"""Shared model contract: config, batching and the predict-probability surface."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..features import FeatureSet, flatten_batch
from ..metrics import chip_level_prediction
from ..tensorkit import Module, Tensor, cross_entropy, no_grad, softmax

ARCHITECTURES = ("logreg", "svm", "plan_lb", "conv3d", "convlstm", "prithvi_lb")
INPUT_FAMILY = {
    "logreg": "flat",
    "svm": "flat",
    "plan_lb": "rs",
    "conv3d": "rs",
    "convlstm": "rs",
    "prithvi_lb": "chip",
}
DEFAULT_HYPER = {
    "logreg": {},
    "svm": {"C": 1.0},
    "plan_lb": {"encoder_channels": [16, 32], "feature_dim": 64, "lstm_hidden": 64},
    "conv3d": {"channels": 32, "kernel": [3, 7, 7], "include_static": True},
    "convlstm": {"hidden": 32, "kernel": 3, "include_static": True},
    "prithvi_lb": {
        "patch": 16, "tubelet": 1, "embed_dim": 64, "depth": 2, "heads": 4,
        "mlp_ratio": 4, "decoder_channels": [32, 16, 8, 8],
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture tag, hyperparameters and the input shapes the model expects.

    ``input_shapes`` maps array names to per-sample shapes: ``temporal``
    (T,n,n,v) and ``static`` (n,n,s) for remotely-sensed models and the flat
    baselines, or ``chip`` (t,b,H,W) for the image model. The flat baselines
    also accept a bare ``flat`` (d,) vector length.
    """

    architecture: str
    input_shapes: dict
    hyper: dict = field(default_factory=dict)
    rng_seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        shapes = {k: tuple(int(d) for d in v) for k, v in self.input_shapes.items()}
        object.__setattr__(self, "input_shapes", shapes)
        merged = dict(DEFAULT_HYPER[self.architecture])
        unknown = set(self.hyper) - set(merged)
        if unknown:
            raise ConfigError(f"unknown {self.architecture} hyperparameters {sorted(unknown)}")
        merged.update(self.hyper)
        object.__setattr__(self, "hyper", merged)
        family = INPUT_FAMILY[self.architecture]
        need = {"chip"} if family == "chip" else {"temporal", "static"}
        if family == "flat" and set(shapes) == {"flat"}:
            if len(shapes["flat"]) != 1 or shapes["flat"][0] < 1:
                raise ConfigError(f"flat shape must be (d,), got {shapes['flat']}")
            return
        if set(shapes) != need:
            raise ConfigError(
                f"{self.architecture} expects input shapes {sorted(need)}, got {sorted(shapes)}"
            )
        if family == "chip" and len(shapes["chip"]) != 4:
            raise ConfigError(f"chip shape must be (t,b,H,W), got {shapes['chip']}")
        if family != "chip":
            t, s = shapes["temporal"], shapes["static"]
            if len(t) != 4 or len(s) != 3 or t[1:3] != s[:2]:
                raise ConfigError(f"temporal {t} and static {s} windows disagree")

    @property
    def family(self) -> str:
        return INPUT_FAMILY[self.architecture]

    @property
    def flat_length(self) -> int:
        if "flat" in self.input_shapes:
            return self.input_shapes["flat"][0]
        return math.prod(self.input_shapes["temporal"]) + math.prod(self.input_shapes["static"])

    def to_json(self) -> dict:
        return {
            "architecture": self.architecture,
            "input_shapes": {k: list(v) for k, v in sorted(self.input_shapes.items())},
            "hyper": self.hyper,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> ModelConfig:
        return cls(obj["architecture"], obj["input_shapes"], obj.get("hyper", {}), obj.get("rng_seed", 0))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def make_batch(fs: FeatureSet, family: str, idx=None) -> dict:
    """Arrays for one batch in the layout a model family consumes."""
    if idx is not None:
        fs = fs.subset(idx)
    batch = {"label": fs.labels}
    if family == "flat":
        if "flat" in fs.arrays:
            batch["flat"] = fs.arrays["flat"]
        else:
            batch["flat"] = flatten_batch(fs.arrays["temporal"], fs.arrays["static"])
    elif family == "rs":
        batch["temporal"] = fs.arrays["temporal"]
        batch["static"] = fs.arrays["static"]
    elif family == "chip":
        batch["chip"] = fs.arrays["chip"]
        batch["mask"] = fs.arrays["mask"]
    else:
        raise ValueError(f"unknown input family {family!r}")
    return batch


class BreedingModel(Module):
    """Base class: subclasses implement :meth:`logits` returning [N,2] (or [N,2,H,W])."""

    architecture = ""

    def __init__(self, config: ModelConfig):
        if config.architecture != self.architecture:
            raise ConfigError(f"{type(self).__name__} built from a {config.architecture} config")
        self.config = config

    @property
    def family(self) -> str:
        return self.config.family

    def logits(self, batch: dict) -> Tensor:
        raise NotImplementedError

    def loss(self, batch: dict) -> Tensor:
        return cross_entropy(self.logits(batch), batch["label"])

    def predict_proba(self, batch: dict) -> np.ndarray:
        with no_grad():
            return softmax(self.logits(batch), axis=1).data

    def point_scores(self, batch: dict) -> np.ndarray:
        """Class-1 probability per sample."""
        return self.predict_proba(batch)[:, 1]

    def fit_begin(self, train_set: FeatureSet) -> None:
        """Hook called once before training."""

    def fit_end(self, val_set: FeatureSet) -> None:
        """Hook called once the selected parameters are restored."""


class PixelModel(BreedingModel):
    """Models whose logits are per-pixel maps scored at chip level."""

    def point_scores(self, batch: dict) -> np.ndarray:
        probs = self.predict_proba(batch)
        return np.array([chip_level_prediction(p, m).score for p, m in zip(probs, batch["mask"])])
