"""Pipeline configuration loaded from a TOML document.

Sections mirror the module configs::

    [paths]       observations, temporal_stack, static_stack, image_stack, output_dir
    [curation]    sampling_bbox, buffer_radius, ratio, rng_seed
    [splits]      train / validation / test = ["YYYY-MM-DD", "YYYY-MM-DD"]
    [features]    window, history_days, period_days, chip_size, chip_periods,
                  chip_period_days, label_radius, bands, normalize
    [model]       architecture, rng_seed, [model.hyper]
    [train]       batch_size, max_epochs, patience, learning_rate, optimizer, ...
    [metrics]     averaging, threshold
    [predict]     region, date, checkpoint, png

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import datetime as dt
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .curation import DEFAULT_SPLITS, CurationConfig, SplitSpec
from .features import FeatureConfig
from .models.base import ARCHITECTURES, DEFAULT_HYPER, INPUT_FAMILY, ConfigError
from .training import TrainConfig

SECTIONS = ("paths", "curation", "splits", "features", "model", "train", "metrics", "predict")
PATH_KEYS = ("observations", "temporal_stack", "static_stack", "image_stack", "output_dir")


@dataclass(frozen=True)
class PredictConfig:
    region: tuple[float, float, float, float] | None = None  # (lon_min, lat_min, lon_max, lat_max)
    date: dt.date | None = None
    checkpoint: Path | None = None
    png: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    paths: dict[str, Path]
    curation: CurationConfig | None
    splits: SplitSpec
    features: FeatureConfig
    architecture: str
    model_hyper: dict
    model_seed: int
    train: TrainConfig
    averaging: str = "binary"
    threshold: float = 0.5
    predict: PredictConfig = field(default_factory=PredictConfig)

    @property
    def output_dir(self) -> Path:
        return self.paths["output_dir"]

    @property
    def family(self) -> str:
        return INPUT_FAMILY[self.architecture]

    def snapshot(self) -> dict:
        """JSON-able view of the resolved configuration."""
        def conv(v):
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, dt.date):
                return v.isoformat()
            if isinstance(v, (tuple, list)):
                return [conv(x) for x in v]
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            return v

        return conv({
            "paths": self.paths,
            "curation": asdict(self.curation) if self.curation else None,
            "splits": self.splits.ranges(),
            "features": asdict(self.features),
            "model": {"architecture": self.architecture, "hyper": self.model_hyper, "rng_seed": self.model_seed},
            "train": asdict(self.train),
            "metrics": {"averaging": self.averaging, "threshold": self.threshold},
            "predict": asdict(self.predict),
        })


def _date(value, where: str) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{where}: {value!r} is not an ISO date") from None


def _bbox(value, where: str) -> tuple[float, float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise ConfigError(f"{where} must be [lon_min, lat_min, lon_max, lat_max]")
    lon0, lat0, lon1, lat1 = (float(v) for v in value)
    if not (lon0 < lon1 and lat0 < lat1):
        raise ConfigError(f"{where} {list(value)} is degenerate")
    return lon0, lat0, lon1, lat1


def _known(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"[{where}] has unknown keys {unknown}")


def _build(cls, section: dict, where: str, **extra):
    names = {f.name for f in fields(cls)}
    _known(section, names - set(extra), where)
    kw = {**section, **extra}
    if "bands" in kw:
        kw["bands"] = tuple(kw["bands"])
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def parse_config(doc: dict, base_dir: Path = Path("."), seed: int | None = None,
                 output_dir: str | Path | None = None) -> PipelineConfig:
    _known(doc, SECTIONS, "top level")
    raw_paths = dict(doc.get("paths", {}))
    _known(raw_paths, PATH_KEYS, "paths")
    raw_paths.setdefault("output_dir", "out")
    paths = {k: base_dir / v for k, v in raw_paths.items()}
    if output_dir is not None:
        paths["output_dir"] = Path(output_dir)  # command-line value is relative to the cwd

    cur = dict(doc.get("curation", {}))
    if seed is not None:
        cur["rng_seed"] = seed
    curation = None
    if "sampling_bbox" in cur:
        cur["sampling_bbox"] = _bbox(cur["sampling_bbox"], "curation.sampling_bbox")
        curation = _build(CurationConfig, cur, "curation")
    else:
        _known(cur, ("buffer_radius", "ratio", "rng_seed"), "curation")

    sp = doc.get("splits", {})
    _known(sp, ("train", "validation", "test"), "splits")
    ranges = DEFAULT_SPLITS.ranges()
    for name, value in sp.items():
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(f"splits.{name} must be [start, end]")
        ranges[name] = (_date(value[0], f"splits.{name}"), _date(value[1], f"splits.{name}"))
    try:
        splits = SplitSpec(**ranges)
    except ValueError as exc:
        raise ConfigError(f"[splits] {exc}") from None

    features = _build(FeatureConfig, dict(doc.get("features", {})), "features")

    model = dict(doc.get("model", {}))
    _known(model, ("architecture", "hyper", "rng_seed"), "model")
    arch = model.get("architecture", "logreg")
    if arch not in ARCHITECTURES:
        raise ConfigError(f"model.architecture {arch!r} not in {ARCHITECTURES}")
    hyper = dict(model.get("hyper", {}))
    unknown = sorted(set(hyper) - set(DEFAULT_HYPER[arch]))
    if unknown:
        raise ConfigError(f"[model.hyper] unknown {arch} hyperparameters {unknown}")
    model_seed = int(seed if seed is not None else model.get("rng_seed", 0))

    tr = dict(doc.get("train", {}))
    if seed is not None:
        tr["rng_seed"] = seed
    _known(tr, {f.name for f in fields(TrainConfig)}, "train")
    try:
        train = TrainConfig.for_architecture(arch, **tr)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[train] {exc}") from None

    met = doc.get("metrics", {})
    _known(met, ("averaging", "threshold"), "metrics")
    averaging = met.get("averaging", "binary")
    if averaging not in ("binary", "macro"):
        raise ConfigError(f"metrics.averaging must be binary or macro, got {averaging!r}")
    threshold = float(met.get("threshold", 0.5))
    if not 0.0 < threshold < 1.0:
        raise ConfigError("metrics.threshold must lie strictly between 0 and 1")

    pr = dict(doc.get("predict", {}))
    _known(pr, ("region", "date", "checkpoint", "png"), "predict")
    predict = PredictConfig(
        region=_bbox(pr["region"], "predict.region") if "region" in pr else None,
        date=_date(pr["date"], "predict.date") if "date" in pr else None,
        checkpoint=(base_dir / pr["checkpoint"]) if "checkpoint" in pr else None,
        png=bool(pr.get("png", False)),
    )

    cfg = PipelineConfig(paths, curation, splits, features, arch, hyper, model_seed, train,
                         averaging, threshold, predict)
    check_consistency(cfg)
    return cfg


def check_consistency(cfg: PipelineConfig) -> None:
    """Cross-section checks that do not need any input file."""
    if cfg.architecture == "prithvi_lb":
        hyper = {**DEFAULT_HYPER["prithvi_lb"], **cfg.model_hyper}
        p, tub = hyper["patch"], hyper["tubelet"]
        if cfg.features.chip_size % p:
            raise ConfigError(f"features.chip_size {cfg.features.chip_size} is not a multiple of patch {p}")
        if cfg.features.chip_periods % tub:
            raise ConfigError(f"features.chip_periods {cfg.features.chip_periods} not divisible by tubelet {tub}")
        if 2 ** len(hyper["decoder_channels"]) != p:
            raise ConfigError(f"{len(hyper['decoder_channels'])} decoder blocks cannot undo patch {p}")
        if cfg.features.label_radius * 2 + 1 > cfg.features.chip_size:
            raise ConfigError("features.label_radius does not fit inside the chip")


def load_config(path, seed: int | None = None, output_dir=None) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, path.parent, seed, output_dir)
