"""Command-line entry point: curate -> featurize/chip -> train -> evaluate -> predict-map.

Every command validates its configuration and inputs before writing
anything, then writes its artifacts plus ``run_<command>.json`` (config
snapshot and git-style content hashes of inputs and outputs) under the
output directory.

Exit codes: 0 success, 2 input/data error, 3 checkpoint/shape error,
4 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import fnv1a64
from .config import PipelineConfig, load_config
from .curation import (
    CurationError,
    assign_splits,
    curated_csv,
    generate_pseudo_absences,
    ingest_presences,
    read_curated,
    summary_table,
)
from .features import (
    LFTFormatError,
    SampleRejected,
    build_chip_features,
    build_rs_features,
    encode_features,
    fit_normalization,
    manifest_json,
    normalize,
    read_features,
)
from .geodata import GeoDataError, read_stack
from .mapping import chip_map, map_stack, point_map, region_pixels, render_png
from .geodata import encode_stack
from .metrics import evaluate_scores
from .models import Checkpoint, CheckpointError, ConfigError, ModelConfig, build_model, model_from_checkpoint
from .tensorkit import ShapeError
from .training import DivergenceError, predict_scores, train

EXIT_OK, EXIT_INPUT, EXIT_CHECKPOINT, EXIT_DIVERGED = 0, 2, 3, 4
SPLITS = ("train", "validation", "test")
METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1", "roc_auc")


class InputError(Exception):
    """Missing or unusable input data."""


def git_blob_sha1(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Run:
    """Collects a command's outputs; nothing touches disk before :meth:`commit`."""

    def __init__(self, command: str, cfg: PipelineConfig):
        self.command = command
        self.cfg = cfg
        self.inputs: dict[str, Path] = {}
        self.files: dict[str, bytes] = {}

    def need(self, label: str, path: Path | None) -> Path:
        if path is None:
            raise ConfigError(f"no path configured for {label}")
        if not Path(path).is_file():
            raise InputError(f"{label} not found: {path}")
        self.inputs[label] = Path(path)
        return Path(path)

    def add(self, rel: str, data) -> None:
        self.files[rel] = data.encode("utf-8") if isinstance(data, str) else bytes(data)

    def commit(self, extra: dict | None = None) -> Path:
        out = self.cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        for rel, data in self.files.items():
            target = out / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg.snapshot(),
            "inputs": {k: {"path": str(p), "sha1": git_blob_sha1(p.read_bytes())} for k, p in sorted(self.inputs.items())},
            "outputs": {rel: git_blob_sha1(data) for rel, data in sorted(self.files.items())},
        }
        if extra:
            manifest.update(extra)
        path = out / f"run_{self.command}.json"
        path.write_text(_json(manifest), encoding="utf-8")
        return path


def _feature_file(cfg: PipelineConfig, kind: str, split: str) -> Path:
    return cfg.output_dir / "features" / f"{kind}_{split}.lft"


def _kind(family: str) -> str:
    return "chip" if family == "chip" else "rs"


def _input_shapes(fs) -> dict:
    if fs.kind == "chip":
        return {"chip": fs.arrays["chip"].shape[1:]}
    return {"temporal": fs.arrays["temporal"].shape[1:], "static": fs.arrays["static"].shape[1:]}


# --- commands ------------------------------------------------------------------

def cmd_curate(cfg: PipelineConfig, args) -> int:
    run = Run("curate", cfg)
    if cfg.curation is None:
        raise ConfigError("[curation] needs sampling_bbox = [lon_min, lat_min, lon_max, lat_max]")
    presences, bad_rows = ingest_presences(run.need("observations", cfg.paths.get("observations")))
    if not presences:
        raise InputError("no presence records")
    absences = generate_pseudo_absences(presences, cfg.curation)
    splits = assign_splits(presences + absences, cfg.splits)
    table = summary_table(splits, cfg.splits)
    run.add("curated.csv", curated_csv(splits))
    run.add("curation_summary.json", _json({
        "table": table,
        "presences": len(presences),
        "pseudo_absences": len(absences),
        "rejected": [{"where": r.where, "reason": r.reason} for r in bad_rows + splits.rejected],
    }))
    run.commit()
    for row in table:
        print(f"{row['split']:<10} non-breeding {row['non_breeding']:>6}  breeding {row['breeding']:>6}  {row['date_range']}")
    return EXIT_OK


def _featurize(cfg: PipelineConfig, run: Run, kind: str, build) -> int:
    curated = run.need("curated records", cfg.output_dir / "curated.csv")
    parts = read_curated(curated)
    sets, rejections = {}, []
    for split in SPLITS:
        fs, rej = build(parts[split])
        sets[split] = fs
        rejections += [(split, r.where, r.reason) for r in rej]
    stats = {}
    if cfg.features.normalize and len(sets["train"]):
        stats = fit_normalization(sets["train"])
        sets = {k: normalize(v, stats) for k, v in sets.items()}
    files = {}
    for split, fs in sets.items():
        raw = encode_features(fs)
        rel = f"features/{kind}_{split}.lft"
        run.add(rel, raw)
        files[rel] = f"{fnv1a64(raw):016x}"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("split", "id", "reason"))
    writer.writerows(rejections)
    run.add(f"features/{kind}_rejections.csv", buf.getvalue())
    norm = {k: v.to_json() for k, v in stats.items()}
    run.add(f"features/{kind}_normalization.json", _json(norm))
    some = sets["train"]
    shapes = {name: list(arr.shape[1:]) for name, arr in some.arrays.items()}
    manifest = {
        "kind": kind,
        "shapes": shapes,
        "counts": {s: {"n": len(fs), "breeding": int(fs.labels.sum()), "non_breeding": int(len(fs) - fs.labels.sum())}
                   for s, fs in sets.items()},
        "rejected": len(rejections),
        "files": files,
        "normalization": norm,
    }
    if kind == "rs":
        manifest["flat_length"] = int(np.prod(shapes["temporal"]) + np.prod(shapes["static"]))
    run.add(f"features/{kind}_manifest.json", manifest_json(manifest))
    run.commit()
    for s, c in manifest["counts"].items():
        print(f"{s:<10} {c['n']:>6} samples")
    print(f"shapes {json.dumps(shapes)}; {len(rejections)} records rejected")
    for split, rid, reason in rejections:
        print(f"rejected {split} {rid}: {reason}")
    return EXIT_OK


def cmd_featurize(cfg: PipelineConfig, args) -> int:
    run = Run("featurize", cfg)
    temporal = read_stack(run.need("temporal_stack", cfg.paths.get("temporal_stack")))
    static = read_stack(run.need("static_stack", cfg.paths.get("static_stack")))
    if temporal.is_static:
        raise InputError("temporal_stack has no timestamps")
    return _featurize(cfg, run, "rs", lambda recs: build_rs_features(recs, temporal, static, cfg.features))


def cmd_chip(cfg: PipelineConfig, args) -> int:
    run = Run("chip", cfg)
    image = read_stack(run.need("image_stack", cfg.paths.get("image_stack")))
    missing = [b for b in cfg.features.bands if b not in image.variables]
    if missing:
        raise InputError(f"image_stack lacks bands {missing}")
    return _featurize(cfg, run, "chip", lambda recs: build_chip_features(recs, image, cfg.features))


def _load_split(run: Run, cfg: PipelineConfig, split: str):
    kind = _kind(cfg.family)
    fs = read_features(run.need(f"{split} features", _feature_file(cfg, kind, split)))
    if len(fs) == 0:
        raise InputError(f"{split} split has no {kind} samples")
    return fs


def cmd_train(cfg: PipelineConfig, args) -> int:
    run = Run("train", cfg)
    train_set = _load_split(run, cfg, "train")
    val_set = _load_split(run, cfg, "validation")
    mcfg = ModelConfig(cfg.architecture, _input_shapes(train_set), cfg.model_hyper, cfg.model_seed)
    model = build_model(mcfg)
    state_path = cfg.output_dir / "train_state.lbck"
    resume = None
    if args.resume:
        if not state_path.is_file():
            raise InputError(f"no training state to resume at {state_path}")
        resume = Checkpoint.load(state_path)
        if resume.config != mcfg:
            raise CheckpointError("saved training state was produced by a different model config")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    ckpt, report = train(model, train_set, val_set, cfg.train, state_path=state_path, resume=resume)
    run.add("model.lbck", ckpt.to_bytes())
    run.add("train_report.json", _json(report.to_json(include_timing=args.timing)))
    run.commit()
    print(f"selected epoch {report.selected_epoch} of {len(report.epochs)}")
    return EXIT_OK


def _checkpoint_model(run: Run, path: Path, config: ModelConfig | None = None):
    ckpt = Checkpoint.load(run.need("checkpoint", path))
    if config is not None and ckpt.config.architecture != config.architecture:
        raise CheckpointError(
            f"checkpoint holds a {ckpt.config.architecture} model, config asks for {config.architecture}"
        )
    try:
        return model_from_checkpoint(ckpt, config)
    except KeyError as exc:
        raise CheckpointError(str(exc)) from None


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    run = Run("evaluate", cfg)
    fs = _load_split(run, cfg, args.split)
    mcfg = ModelConfig(cfg.architecture, _input_shapes(fs), cfg.model_hyper, cfg.model_seed)
    model = _checkpoint_model(run, Path(args.checkpoint) if args.checkpoint else cfg.output_dir / "model.lbck", mcfg)
    result = evaluate_scores(predict_scores(model, fs), fs.labels, cfg.threshold)
    row = {k: result[cfg.averaging][k] for k in METRIC_COLUMNS}
    report = {"split": args.split, "architecture": cfg.architecture, "averaging": cfg.averaging, "row": row, **result}
    run.add(f"metrics_{args.split}.json", _json(report))
    run.commit()
    print("  ".join(f"{k} {'n/a' if v is None else f'{100 * v:.2f}'}" for k, v in row.items()))
    return EXIT_OK


def cmd_predict_map(cfg: PipelineConfig, args) -> int:
    run = Run("predict-map", cfg)
    region = tuple(args.region) if args.region else cfg.predict.region
    if region is None:
        raise ConfigError("predict-map needs a region (--region or [predict] region)")
    date = dt.date.fromisoformat(args.date) if args.date else cfg.predict.date
    if date is None:
        raise ConfigError("predict-map needs a date (--date or [predict] date)")
    ckpt_path = Path(args.checkpoint) if args.checkpoint else (cfg.predict.checkpoint or cfg.output_dir / "model.lbck")
    model = _checkpoint_model(run, ckpt_path)
    kind = _kind(model.family)
    stats = None
    if cfg.features.normalize:
        stats = json.loads(run.need("normalization", cfg.output_dir / "features" / f"{kind}_normalization.json").read_text())
    if kind == "chip":
        image = read_stack(run.need("image_stack", cfg.paths.get("image_stack")))
        fcfg = cfg.features
        if model.config.input_shapes["chip"][-1] != fcfg.chip_size:
            raise ShapeError(f"model expects {model.config.input_shapes['chip']} chips, features.chip_size is {fcfg.chip_size}")
        gt = image.transform
        box = region_pixels(gt, region)
        prob = chip_map(model, image, box, date, fcfg, stats)
    else:
        temporal = read_stack(run.need("temporal_stack", cfg.paths.get("temporal_stack")))
        static = read_stack(run.need("static_stack", cfg.paths.get("static_stack")))
        gt = temporal.transform
        box = region_pixels(gt, region)
        prob = point_map(model, temporal, static, box, date, cfg.features, stats)
    stack = map_stack(gt, box, prob, cfg.threshold)
    run.add("prediction_map.lgrs", encode_stack(stack))
    if args.png or cfg.predict.png:
        buf = io.BytesIO()
        render_png(prob, cfg.threshold, buf)
        run.add("prediction_map.png", buf.getvalue())
    run.commit({"region": list(region), "date": date.isoformat(), "pixel_box": list(box)})
    valid = np.isfinite(prob)
    print(f"map {box[2]}x{box[3]} cells, {int(valid.sum())} predicted, "
          f"{int((prob[valid] >= cfg.threshold).sum())} flagged as breeding")
    return EXIT_OK


COMMANDS = {
    "curate": cmd_curate,
    "featurize": cmd_featurize,
    "chip": cmd_chip,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict-map": cmd_predict_map,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML config (default locustbreed.toml)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override every rng_seed")
    common.add_argument("--output-dir", default=argparse.SUPPRESS, help="override paths.output_dir")
    parser = argparse.ArgumentParser(prog="locustbreed", parents=[common], description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("curate", parents=[common], help="build the curated presence/pseudo-absence table")
    sub.add_parser("featurize", parents=[common], help="remotely-sensed feature blocks per split")
    sub.add_parser("chip", parents=[common], help="image chips and label masks per split")
    p = sub.add_parser("train", parents=[common], help="train the configured model")
    p.add_argument("--resume", action="store_true", help="continue from train_state.lbck")
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds in the report")
    p = sub.add_parser("evaluate", parents=[common], help="metrics of a checkpoint on one split")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=SPLITS, default="test")
    p = sub.add_parser("predict-map", parents=[common], help="probability raster over a region")
    p.add_argument("--checkpoint")
    p.add_argument("--region", type=float, nargs=4, metavar=("LON_MIN", "LAT_MIN", "LON_MAX", "LAT_MAX"))
    p.add_argument("--date", help="YYYY-MM-DD")
    p.add_argument("--png", action="store_true", help="also render prediction_map.png")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", "locustbreed.toml"), getattr(args, "seed", None),
                          getattr(args, "output_dir", None))
        return COMMANDS[args.command](cfg, args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ConfigError, InputError, CurationError, GeoDataError, LFTFormatError, SampleRejected,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
