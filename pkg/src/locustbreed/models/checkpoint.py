"""Checkpoint files: JSON manifest plus tensor snapshots.

Layout::

    LBCK1\\n
    <manifest JSON, one line>\\n
    <tensor snapshots, in manifest["tensors"] order>
    <FNV-1a 64 checksum of everything above, little-endian uint64>

The manifest holds ``architecture``, ``config`` (a ModelConfig),
``parameters`` (name -> shape for model tensors), ``tensors`` (name and
shape of every stored snapshot, model tensors first, then optimizer and
best-so-far state) and ``training_state`` (free-form JSON).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._kernels import fnv1a64
from ..tensorkit import decode_tensor, encode_tensor
from .base import ModelConfig

MAGIC = b"LBCK1\n"


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    parameters: dict[str, np.ndarray]
    training_state: dict = field(default_factory=dict)
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        names = list(self.parameters) + list(self.extra)
        arrays = {**self.parameters, **self.extra}
        manifest = {
            "architecture": self.config.architecture,
            "config": self.config.to_json(),
            "parameters": {n: list(self.parameters[n].shape) for n in self.parameters},
            "tensors": [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names],
            "training_state": self.training_state,
        }
        body = MAGIC + json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode() + b"\n"
        body += b"".join(encode_tensor(arrays[n]) for n in names)
        return body + fnv1a64(body).to_bytes(8, "little")

    @classmethod
    def from_bytes(cls, raw: bytes) -> Checkpoint:
        if not raw.startswith(MAGIC):
            raise CheckpointError("not a checkpoint file (bad magic)")
        body, stored = raw[:-8], int.from_bytes(raw[-8:], "little")
        if fnv1a64(body) != stored:
            raise CheckpointError("checkpoint checksum does not match")
        nl = body.index(b"\n", len(MAGIC))
        manifest = json.loads(body[len(MAGIC):nl])
        offset = nl + 1
        arrays = {}
        for entry in manifest["tensors"]:
            arr, offset = decode_tensor(body, offset)
            if list(arr.shape) != entry["shape"]:
                raise CheckpointError(f"{entry['name']}: snapshot shape {arr.shape} vs manifest {entry['shape']}")
            arrays[entry["name"]] = arr
        if offset != len(body):
            raise CheckpointError("trailing bytes after tensor snapshots")
        # tensor order, not the sorted manifest keys, so a reload re-serialises identically
        params = {e["name"]: arrays.pop(e["name"]) for e in manifest["tensors"] if e["name"] in manifest["parameters"]}
        return cls(ModelConfig.from_json(manifest["config"]), params, manifest["training_state"], arrays)

    def save(self, path) -> bytes:
        raw = self.to_bytes()
        Path(path).write_bytes(raw)
        return raw

    @classmethod
    def load(cls, path) -> Checkpoint:
        return cls.from_bytes(Path(path).read_bytes())
