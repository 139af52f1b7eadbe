"""Region tiling, inference and stitching for probability maps.

Tiles of size S start at 0, S, 2S, ... along each axis, plus a final tile at
L - S when the region length L is not a multiple of S. Where tiles overlap a
pixel takes its value from the tile whose centre is nearest along each axis;
ties go to the earlier tile. For a grid of tiles this is the same as the
tile with the nearest centre in the plane.
"""
from __future__ import annotations

import datetime as dt
import math

import numpy as np

from .curation import PSEUDO_ABSENCE, ObservationRecord
from .features import (
    VARIABLE_AXIS,
    FeatureConfig,
    NormStats,
    SampleRejected,
    build_static_block,
    build_temporal_block,
    compose_chip,
    history_slice,
)
from .geodata import GeoTransform, OutOfBounds, RasterStack
from .models import BreedingModel

MAP_VARIABLES = ("p_breeding", "breeding")
MAP_NODATA = -9999.0


def region_pixels(gt: GeoTransform, region) -> tuple[int, int, int, int]:
    """(row0, col0, n_rows, n_cols) of the cells whose centres fall inside ``region``."""
    lon0, lat0, lon1, lat1 = region
    col0 = math.ceil((lon0 - gt.origin_lon) / gt.pixel_size_lon - 0.5)
    col1 = math.floor((lon1 - gt.origin_lon) / gt.pixel_size_lon - 0.5)
    row0 = math.ceil((gt.origin_lat - lat1) / gt.pixel_size_lat - 0.5)
    row1 = math.floor((gt.origin_lat - lat0) / gt.pixel_size_lat - 0.5)
    if row0 < 0 or col0 < 0 or row1 >= gt.n_rows or col1 >= gt.n_cols:
        raise OutOfBounds(f"region {tuple(region)} extends outside the raster footprint {gt.bounds}")
    if row1 < row0 or col1 < col0:
        raise OutOfBounds(f"region {tuple(region)} contains no cell centre")
    return row0, col0, row1 - row0 + 1, col1 - col0 + 1


def tile_starts(length: int, size: int) -> list[int]:
    if length < size:
        raise ValueError(f"region length {length} is smaller than the tile size {size}")
    starts = list(range(0, length - size + 1, size))
    if starts[-1] + size < length:
        starts.append(length - size)
    return starts


def nearest_tile(length: int, starts, size: int) -> np.ndarray:
    """Index into ``starts`` of the owning tile for each pixel along one axis."""
    centres = np.asarray(starts, dtype=np.float64) + size / 2.0
    pos = np.arange(length) + 0.5
    return np.argmin(np.abs(pos[:, None] - centres[None, :]), axis=1)


def stitch(tiles: dict, row_starts, col_starts, shape: tuple[int, int], size: int) -> np.ndarray:
    """Assemble ``tiles[(i, j)]`` ([size, size] arrays) by the nearest-centre rule."""
    rows = nearest_tile(shape[0], row_starts, size)
    cols = nearest_tile(shape[1], col_starts, size)
    out = np.empty(shape, dtype=np.float64)
    for r in range(shape[0]):
        i = rows[r]
        local_r = r - row_starts[i]
        for j in np.unique(cols):
            sel = np.nonzero(cols == j)[0]
            out[r, sel] = tiles[(i, j)][local_r, sel - col_starts[j]]
    return out


def _normalize(arr: np.ndarray, stats: dict | None, name: str) -> np.ndarray:
    if not stats or name not in stats:
        return arr
    return NormStats.from_json(stats[name]).apply(arr, VARIABLE_AXIS[name])


def point_map(
    model: BreedingModel,
    temporal_stack: RasterStack,
    static_stack: RasterStack,
    box: tuple[int, int, int, int],
    date: dt.date,
    cfg: FeatureConfig,
    stats: dict | None = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Class-1 probability per temporal-stack cell of ``box``; NaN where no features exist."""
    history_slice(temporal_stack, date, cfg.history_days)  # fail early on a date without history
    row0, col0, nr, nc = box
    gt = temporal_stack.transform
    out = np.full((nr, nc), np.nan)
    cells, temporal, static = [], [], []
    for r in range(nr):
        for c in range(nc):
            lon, lat = gt.pixel_to_world(row0 + r, col0 + c)
            rec = ObservationRecord(f"cell-{r}-{c}", lon, lat, date, 0, PSEUDO_ABSENCE)
            try:
                tb = build_temporal_block(rec, temporal_stack, cfg)
                sb = build_static_block(rec, static_stack, cfg)
            except SampleRejected:
                continue
            cells.append((r, c))
            temporal.append(tb.values)
            static.append(sb.values)
    if not cells:
        return out
    # round through float32 like stored feature files do
    temporal = np.asarray(temporal, dtype=np.float32).astype(np.float64)
    static = np.asarray(static, dtype=np.float32).astype(np.float64)
    temporal = _normalize(temporal, stats, "temporal")
    static = _normalize(static, stats, "static")
    scores = []
    for i in range(0, len(cells), batch_size):
        batch = {"temporal": temporal[i:i + batch_size], "static": static[i:i + batch_size]}
        if model.family == "flat":
            n = batch["temporal"].shape[0]
            batch = {"flat": np.concatenate([batch["temporal"].reshape(n, -1), batch["static"].reshape(n, -1)], 1)}
        scores.append(model.predict_proba(batch)[:, 1])
    for (r, c), s in zip(cells, np.concatenate(scores)):
        out[r, c] = s
    return out


def chip_map(
    model: BreedingModel,
    image_stack: RasterStack,
    box: tuple[int, int, int, int],
    date: dt.date,
    cfg: FeatureConfig,
    stats: dict | None = None,
) -> np.ndarray:
    """Per-pixel class-1 probability over ``box``, stitched from chip tiles."""
    row0, col0, nr, nc = box
    size = cfg.chip_size
    rs, cs = tile_starts(nr, size), tile_starts(nc, size)
    tiles = {}
    for i, r in enumerate(rs):
        for j, c in enumerate(cs):
            values, _ = compose_chip(image_stack, row0 + r, col0 + c, date, cfg)
            chip = np.asarray(values, dtype=np.float32).astype(np.float64)[None]
            chip = _normalize(chip, stats, "chip")
            tiles[(i, j)] = model.predict_proba({"chip": chip})[0, 1]
    return stitch(tiles, rs, cs, (nr, nc), size)


def map_stack(gt: GeoTransform, box, prob: np.ndarray, threshold: float) -> RasterStack:
    """Two-layer raster: probability and the thresholded breeding flag."""
    valid = np.isfinite(prob)
    flag = np.where(prob >= threshold, 1.0, 0.0)
    values = np.stack([np.where(valid, prob, MAP_NODATA), np.where(valid, flag, MAP_NODATA)])[:, None]
    return RasterStack(gt.subgrid(*box), MAP_VARIABLES, (), values, MAP_NODATA)


def render_png(prob: np.ndarray, threshold: float, path) -> None:
    """Grey-scale probability with predicted breeding cells in red; nodata is black."""
    from PIL import Image

    valid = np.isfinite(prob)
    grey = np.where(valid, np.clip(prob, 0.0, 1.0) * 255.0, 0.0).astype(np.uint8)
    rgb = np.stack([grey, grey, grey], axis=-1)
    rgb[valid & (prob >= threshold)] = (220, 20, 20)
    Image.fromarray(rgb).save(path, format="PNG")
