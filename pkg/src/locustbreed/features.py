"""Model-ready inputs built from observation records and raster stacks.

Three representations come out of here:

* temporal block ``[T][n][n][v]`` of 3-day means plus a static block ``[n][n][s]``,
* their flattened concatenation for the linear baselines,
* multi-temporal image chips ``[t][b][H][W]`` with a point-label target mask.
"""
from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import fnv1a64
from .curation import ObservationRecord, Rejection
from .geodata import OutOfBounds, RasterStack, Window, WindowClipped, extract_window

HLS_BANDS = ("Blue", "Green", "Red", "Narrow NIR", "SWIR 1", "SWIR 2")
IGNORE = 255
LFT_MAGIC = "LFT1"


class SampleRejected(Exception):
    """A record that cannot be turned into a clean sample."""

    reason = "rejected"

    def __init__(self, message: str = "", reason: str | None = None):
        super().__init__(message or reason or self.reason)
        if reason is not None:
            self.reason = reason


class InsufficientHistory(SampleRejected):
    reason = "insufficient-history"


class MissingPeriod(SampleRejected):
    reason = "missing-period"


class LFTFormatError(Exception):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    window: int = 7
    history_days: int = 90
    period_days: int = 3
    chip_size: int = 224
    chip_periods: int = 3
    chip_period_days: int = 30
    label_radius: int = 8
    bands: tuple[str, ...] = HLS_BANDS
    normalize: bool = True

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and positive, got {self.window}")
        if self.history_days % self.period_days:
            raise ValueError(
                f"history_days ({self.history_days}) must be divisible by {self.period_days}"
            )
        if self.label_radius < 0 or self.chip_size < 1:
            raise ValueError("label_radius must be >= 0 and chip_size >= 1")

    @property
    def n_steps(self) -> int:
        return self.history_days // self.period_days


@dataclass(frozen=True, eq=False)
class TemporalBlock:
    values: np.ndarray
    variables: tuple[str, ...]
    record_id: str


@dataclass(frozen=True, eq=False)
class StaticBlock:
    values: np.ndarray
    variables: tuple[str, ...]
    record_id: str


@dataclass(frozen=True, eq=False)
class Chip:
    values: np.ndarray
    bands: tuple[str, ...]
    record_id: str
    mask: np.ndarray
    scene_dates: tuple[dt.date, ...] = ()


@dataclass(frozen=True, eq=False)
class FlatVector:
    values: np.ndarray
    record_id: str


def resample_3day_means(daily: np.ndarray, nodata: float = -9999.0, period: int = 3) -> np.ndarray:
    """Average consecutive ``period``-day groups along axis 0, skipping nodata days.

    A group whose days are all nodata makes the whole sample unusable.
    """
    daily = np.asarray(daily, dtype=np.float64)
    if daily.shape[0] % period:
        raise ValueError(f"series length {daily.shape[0]} is not a multiple of {period}")
    grouped = daily.reshape((daily.shape[0] // period, period) + daily.shape[1:])
    valid = grouped != nodata
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise SampleRejected("a resampling period has no valid days", reason="missing-temporal")
    return np.where(valid, grouped, 0.0).sum(axis=1) / counts


def _locate(record: ObservationRecord, stack: RasterStack) -> tuple[int, int]:
    try:
        return stack.transform.world_to_pixel(record.lon, record.lat)
    except OutOfBounds as exc:
        raise SampleRejected(str(exc), reason="out-of-bounds") from None


def _window(stack: RasterStack, row: int, col: int, n: int, time_slice=None) -> np.ndarray:
    try:
        return extract_window(stack, Window.of_size(row, col, n), time_slice)
    except WindowClipped as exc:
        raise SampleRejected(str(exc), reason="window-clipped") from None


def history_slice(stack: RasterStack, end: dt.date, days: int) -> slice:
    """Index range of the ``days`` daily timestamps ending on ``end`` (inclusive)."""
    try:
        stop = stack.time_index(end) + 1
    except KeyError:
        raise InsufficientHistory(f"stack has no timestamp for {end.isoformat()}") from None
    start = stop - days
    if start < 0 or (stack.timestamps[stop - 1] - stack.timestamps[start]).days != days - 1:
        raise InsufficientHistory(
            f"stack does not hold {days} consecutive daily steps ending {end.isoformat()}"
        )
    return slice(start, stop)


def build_temporal_block(
    record: ObservationRecord, stack: RasterStack, cfg: FeatureConfig = FeatureConfig()
) -> TemporalBlock:
    if stack.is_static:
        raise ValueError("temporal block needs a stack with timestamps")
    row, col = _locate(record, stack)
    sl = history_slice(stack, record.obs_date, cfg.history_days)
    daily = _window(stack, row, col, cfg.window, sl)
    means = resample_3day_means(daily, stack.nodata, cfg.period_days)
    return TemporalBlock(means, stack.variables, record.id)


def build_static_block(
    record: ObservationRecord, stack: RasterStack, cfg: FeatureConfig = FeatureConfig()
) -> StaticBlock:
    row, col = _locate(record, stack)
    block = _window(stack, row, col, cfg.window)[0]
    if (block == np.float32(stack.nodata)).any():
        raise SampleRejected("static window contains nodata", reason="missing-static")
    return StaticBlock(block.astype(np.float64), stack.variables, record.id)


def flatten_concat(tb: TemporalBlock, sb: StaticBlock) -> FlatVector:
    if tb.record_id != sb.record_id:
        raise ValueError(f"blocks belong to different records ({tb.record_id} vs {sb.record_id})")
    flat = np.concatenate([np.asarray(tb.values, np.float64).ravel(), np.asarray(sb.values, np.float64).ravel()])
    return FlatVector(flat, tb.record_id)


def unflatten(flat: FlatVector, temporal_shape, static_shape) -> tuple[TemporalBlock, StaticBlock]:
    split = math.prod(temporal_shape)
    if flat.values.shape != (split + math.prod(static_shape),):
        raise ValueError(f"flat length {flat.values.shape} does not match {temporal_shape} + {static_shape}")
    tb = flat.values[:split].reshape(temporal_shape)
    sb = flat.values[split:].reshape(static_shape)
    return TemporalBlock(tb, (), flat.record_id), StaticBlock(sb, (), flat.record_id)


def flatten_batch(temporal: np.ndarray, static: np.ndarray) -> np.ndarray:
    """Row-wise flat vectors for a batch of blocks (temporal entries first)."""
    n = temporal.shape[0]
    return np.concatenate([temporal.reshape(n, -1), static.reshape(n, -1)], axis=1)


def period_bounds(end: dt.date, n_periods: int, period_days: int) -> list[tuple[dt.date, dt.date]]:
    """Consecutive inclusive periods, oldest first, the last one ending on ``end``."""
    bounds = []
    for p in range(n_periods):
        hi = end - dt.timedelta(days=(n_periods - 1 - p) * period_days)
        bounds.append((hi - dt.timedelta(days=period_days - 1), hi))
    return bounds


def compose_chip(
    stack: RasterStack, row0: int, col0: int, end: dt.date, cfg: FeatureConfig = FeatureConfig()
) -> tuple[np.ndarray, tuple[dt.date, ...]]:
    """Crop a ``[t][b][size][size]`` block whose top-left pixel is (row0, col0).

    Within each period the scene with the fewest nodata pixels in the crop is
    used; ties go to the most recent scene.
    """
    size = cfg.chip_size
    if row0 < 0 or col0 < 0 or row0 + size > stack.transform.n_rows or col0 + size > stack.transform.n_cols:
        raise SampleRejected(
            f"chip at ({row0}, {col0}) of size {size} leaves raster {stack.transform.shape}",
            reason="window-clipped",
        )
    try:
        band_idx = [stack.variables.index(b) for b in cfg.bands]
    except ValueError as exc:
        raise ValueError(f"image stack lacks a requested band: {exc}") from None
    crop = stack.values[band_idx, :, row0:row0 + size, col0:col0 + size]
    nodata = np.float32(stack.nodata)
    frames, chosen = [], []
    for lo, hi in period_bounds(end, cfg.chip_periods, cfg.chip_period_days):
        candidates = [i for i, t in enumerate(stack.timestamps) if lo <= t <= hi]
        if not candidates:
            raise MissingPeriod(f"no scene between {lo.isoformat()} and {hi.isoformat()}")
        best = min(candidates, key=lambda i: (int((crop[:, i] == nodata).sum()), -i))
        if (crop[:, best] == nodata).any():
            raise SampleRejected(
                f"best scene {stack.timestamps[best].isoformat()} still has nodata pixels",
                reason="missing-chip-pixels",
            )
        frames.append(crop[:, best])
        chosen.append(stack.timestamps[best])
    return np.stack(frames).astype(np.float64), tuple(chosen)


def label_mask(size: int, radius: int, label: int) -> np.ndarray:
    c = size // 2
    ii, jj = np.mgrid[0:size, 0:size]
    mask = np.full((size, size), IGNORE, dtype=np.uint8)
    mask[(ii - c) ** 2 + (jj - c) ** 2 <= radius * radius] = label
    return mask


def build_chip(record: ObservationRecord, stack: RasterStack, cfg: FeatureConfig = FeatureConfig()) -> Chip:
    row, col = _locate(record, stack)
    half = cfg.chip_size // 2
    values, dates = compose_chip(stack, row - half, col - half, record.obs_date, cfg)
    return Chip(values, tuple(cfg.bands), record.id, label_mask(cfg.chip_size, cfg.label_radius, record.label), dates)


# --- normalisation ----------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    @classmethod
    def fit(cls, data: np.ndarray, axis: int) -> NormStats:
        """Per-variable statistics; ``axis`` is the variable axis of ``data``."""
        moved = np.moveaxis(np.asarray(data, np.float64), axis, -1).reshape(-1, data.shape[axis])
        mean = moved.mean(axis=0)
        std = moved.std(axis=0)
        std[std == 0] = 1.0
        return cls(tuple(float(m) for m in mean), tuple(float(s) for s in std))

    def apply(self, data: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * data.ndim
        shape[axis] = -1
        mean = np.asarray(self.mean).reshape(shape)
        std = np.asarray(self.std).reshape(shape)
        return (data - mean) / std

    def to_json(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_json(cls, obj: dict) -> NormStats:
        return cls(tuple(obj["mean"]), tuple(obj["std"]))


# variable axis of each stored array, counted on the batched array [N, ...]
VARIABLE_AXIS = {"temporal": -1, "static": -1, "chip": 2}


# --- sample sets and .lft files ---------------------------------------------

@dataclass
class FeatureSet:
    """A batch of samples: ``arrays[name]`` has a leading sample axis."""

    kind: str
    ids: list[str]
    labels: np.ndarray
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> FeatureSet:
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureSet(
            self.kind, [self.ids[i] for i in idx], self.labels[idx],
            {k: v[idx] for k, v in self.arrays.items()},
        )

    def sorted_by_id(self) -> FeatureSet:
        order = sorted(range(len(self.ids)), key=lambda i: self.ids[i])
        return self.subset(order)


def build_rs_features(
    records: list[ObservationRecord],
    temporal_stack: RasterStack,
    static_stack: RasterStack,
    cfg: FeatureConfig = FeatureConfig(),
) -> tuple[FeatureSet, list[Rejection]]:
    ids, labels, temporal, static, rejected = [], [], [], [], []
    for rec in records:
        try:
            tb = build_temporal_block(rec, temporal_stack, cfg)
            sb = build_static_block(rec, static_stack, cfg)
        except SampleRejected as exc:
            rejected.append(Rejection(rec.id, exc.reason))
            continue
        ids.append(rec.id)
        labels.append(rec.label)
        temporal.append(tb.values)
        static.append(sb.values)
    t_shape = (cfg.n_steps, cfg.window, cfg.window, len(temporal_stack.variables))
    s_shape = (cfg.window, cfg.window, len(static_stack.variables))
    fs = FeatureSet(
        "rs", ids, np.asarray(labels, dtype=np.int64),
        {
            "temporal": np.asarray(temporal, dtype=np.float64).reshape((-1,) + t_shape),
            "static": np.asarray(static, dtype=np.float64).reshape((-1,) + s_shape),
        },
    )
    return fs.sorted_by_id(), rejected


def build_chip_features(
    records: list[ObservationRecord], image_stack: RasterStack, cfg: FeatureConfig = FeatureConfig()
) -> tuple[FeatureSet, list[Rejection]]:
    ids, labels, chips, masks, rejected = [], [], [], [], []
    for rec in records:
        try:
            chip = build_chip(rec, image_stack, cfg)
        except SampleRejected as exc:
            rejected.append(Rejection(rec.id, exc.reason))
            continue
        ids.append(rec.id)
        labels.append(rec.label)
        chips.append(chip.values)
        masks.append(chip.mask)
    size = cfg.chip_size
    fs = FeatureSet(
        "chip", ids, np.asarray(labels, dtype=np.int64),
        {
            "chip": np.asarray(chips, dtype=np.float64).reshape(-1, cfg.chip_periods, len(cfg.bands), size, size),
            "mask": np.asarray(masks, dtype=np.uint8).reshape(-1, size, size),
        },
    )
    return fs.sorted_by_id(), rejected


def fit_normalization(fs: FeatureSet) -> dict[str, NormStats]:
    return {
        name: NormStats.fit(arr, VARIABLE_AXIS[name])
        for name, arr in fs.arrays.items()
        if name in VARIABLE_AXIS and len(fs)
    }


def normalize(fs: FeatureSet, stats: dict[str, NormStats]) -> FeatureSet:
    arrays = dict(fs.arrays)
    for name, st in stats.items():
        arrays[name] = st.apply(arrays[name], VARIABLE_AXIS[name])
    return FeatureSet(fs.kind, list(fs.ids), fs.labels.copy(), arrays)


# .lft layout:
#   LFT1
#   kind=<rs|chip>
#   arrays=<name>:<dtype>:<d1>x<d2>...;...     dtype in {f4, u1}
#   count=<N>
#   sample=<byte offset>,<label>,<record id>   (N lines, payload order)
#   <blank line>
#   <payload: per sample, each array in declared order, little-endian>
#   <FNV-1a 64 checksum of payload, little-endian uint64>

_LFT_DTYPES = {"chip": "f4", "temporal": "f4", "static": "f4", "mask": "u1"}
_NP_DTYPES = {"f4": np.dtype("<f4"), "u1": np.dtype("u1")}


def encode_features(fs: FeatureSet) -> bytes:
    names = list(fs.arrays)
    specs = []
    for name in names:
        code = _LFT_DTYPES.get(name, "f4")
        shape = fs.arrays[name].shape[1:]
        specs.append((name, code, shape))
    sample_bytes = sum(_NP_DTYPES[c].itemsize * math.prod(s) for _, c, s in specs)
    lines = [
        LFT_MAGIC,
        f"kind={fs.kind}",
        "arrays=" + ";".join(f"{n}:{c}:{'x'.join(map(str, s))}" for n, c, s in specs),
        f"count={len(fs)}",
    ]
    for i, (rid, label) in enumerate(zip(fs.ids, fs.labels)):
        if "\n" in rid or "\r" in rid:
            raise ValueError(f"record id {rid!r} cannot be stored in an .lft index")
        lines.append(f"sample={i * sample_bytes},{int(label)},{rid}")
    parts = []
    for i in range(len(fs)):
        for name, code, _ in specs:
            parts.append(np.ascontiguousarray(fs.arrays[name][i], dtype=_NP_DTYPES[code]).tobytes())
    payload = b"".join(parts)
    header = ("\n".join(lines) + "\n\n").encode("utf-8")
    return header + payload + fnv1a64(payload).to_bytes(8, "little")


def decode_features(raw: bytes) -> FeatureSet:
    end = raw.find(b"\n\n")
    if end < 0:
        raise LFTFormatError("header is not terminated by a blank line")
    lines = raw[:end].decode("utf-8").split("\n")
    if lines[0] != LFT_MAGIC:
        raise LFTFormatError(f"bad magic {lines[0]!r}")
    kind = arrays = count = None
    index = []
    for line in lines[1:]:
        key, _, value = line.partition("=")
        if key == "kind":
            kind = value
        elif key == "arrays":
            arrays = []
            for spec in value.split(";"):
                name, code, dims = spec.split(":")
                arrays.append((name, code, tuple(int(d) for d in dims.split("x"))))
        elif key == "count":
            count = int(value)
        elif key == "sample":
            off, label, rid = value.split(",", 2)
            index.append((int(off), int(label), rid))
        else:
            raise LFTFormatError(f"unknown header line {line!r}")
    if kind is None or arrays is None or count is None or len(index) != count:
        raise LFTFormatError("incomplete .lft header")
    body = raw[end + 2:]
    payload, stored = body[:-8], int.from_bytes(body[-8:], "little")
    sample_bytes = sum(_NP_DTYPES[c].itemsize * math.prod(s) for _, c, s in arrays)
    if len(payload) != sample_bytes * count:
        raise LFTFormatError(f"payload holds {len(payload)} bytes, expected {sample_bytes * count}")
    if fnv1a64(payload) != stored:
        raise LFTFormatError("payload checksum does not match")
    out = {name: np.empty((count,) + shape, dtype=_NP_DTYPES[code]) for name, code, shape in arrays}
    for i, (off, _, _) in enumerate(index):
        pos = off
        for name, code, shape in arrays:
            nbytes = _NP_DTYPES[code].itemsize * math.prod(shape)
            out[name][i] = np.frombuffer(payload, _NP_DTYPES[code], math.prod(shape), pos).reshape(shape)
            pos += nbytes
    return FeatureSet(
        kind,
        [rid for _, _, rid in index],
        np.array([lab for _, lab, _ in index], dtype=np.int64),
        {name: arr.astype(np.float64) if code == "f4" else arr for (name, code, _), arr in zip(arrays, out.values())},
    )


def write_features(fs: FeatureSet, path) -> bytes:
    raw = encode_features(fs)
    Path(path).write_bytes(raw)
    return raw


def read_features(path) -> FeatureSet:
    return decode_features(Path(path).read_bytes())


def manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"
