"""Georeferenced raster stacks on a plate-carree lon/lat grid.

Row 0 is the northernmost row; column 0 the westernmost. A stack holds
``values[variable][time][row][col]`` as float32 with a nodata sentinel, and is
persisted in the LGRS format (see :func:`write_stack`).
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import fnv1a64

DEFAULT_RESOLUTION = 0.1
DEFAULT_NODATA = -9999.0
LGRS_MAGIC = "LGRS1"


class GeoDataError(Exception):
    """Base class for raster errors."""


class OutOfBounds(GeoDataError):
    pass


class WindowClipped(GeoDataError):
    pass


class LGRSFormatError(GeoDataError):
    pass


class MalformedHeader(LGRSFormatError):
    pass


class ExtentMismatch(LGRSFormatError):
    pass


class ChecksumMismatch(LGRSFormatError):
    pass


@dataclass(frozen=True)
class GeoTransform:
    """Affine lon/lat grid: ``origin`` is the north-west corner of cell (0, 0)."""

    origin_lon: float
    origin_lat: float
    pixel_size_lon: float = DEFAULT_RESOLUTION
    pixel_size_lat: float = DEFAULT_RESOLUTION
    n_rows: int = 1
    n_cols: int = 1

    def __post_init__(self):
        if not (self.pixel_size_lon > 0 and self.pixel_size_lat > 0):
            raise ValueError("pixel sizes must be positive")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("raster must have at least one row and column")

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(west, south, east, north)"""
        return (
            self.origin_lon,
            self.origin_lat - self.n_rows * self.pixel_size_lat,
            self.origin_lon + self.n_cols * self.pixel_size_lon,
            self.origin_lat,
        )

    def world_to_pixel(self, lon: float, lat: float) -> tuple[int, int]:
        col = math.floor((lon - self.origin_lon) / self.pixel_size_lon)
        row = math.floor((self.origin_lat - lat) / self.pixel_size_lat)
        if not (0 <= row < self.n_rows and 0 <= col < self.n_cols):
            raise OutOfBounds(f"({lon}, {lat}) falls outside the raster footprint {self.bounds}")
        return row, col

    def pixel_to_world(self, row: int, col: int) -> tuple[float, float]:
        """Centre of cell (row, col) as (lon, lat)."""
        return (
            self.origin_lon + (col + 0.5) * self.pixel_size_lon,
            self.origin_lat - (row + 0.5) * self.pixel_size_lat,
        )

    def cell_bounds(self, row: int, col: int) -> tuple[float, float, float, float]:
        west = self.origin_lon + col * self.pixel_size_lon
        north = self.origin_lat - row * self.pixel_size_lat
        return west, north - self.pixel_size_lat, west + self.pixel_size_lon, north

    def subgrid(self, row0: int, col0: int, n_rows: int, n_cols: int) -> GeoTransform:
        """Transform of the block whose top-left cell is (row0, col0)."""
        return GeoTransform(
            origin_lon=self.origin_lon + col0 * self.pixel_size_lon,
            origin_lat=self.origin_lat - row0 * self.pixel_size_lat,
            pixel_size_lon=self.pixel_size_lon,
            pixel_size_lat=self.pixel_size_lat,
            n_rows=n_rows,
            n_cols=n_cols,
        )


def world_to_pixel(gt: GeoTransform, lon: float, lat: float) -> tuple[int, int]:
    return gt.world_to_pixel(lon, lat)


def pixel_to_world(gt: GeoTransform, row: int, col: int) -> tuple[float, float]:
    return gt.pixel_to_world(row, col)


@dataclass(frozen=True)
class Window:
    center_row: int
    center_col: int
    half_width: int = 3

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("half_width must be non-negative")

    @property
    def size(self) -> int:
        return 2 * self.half_width + 1

    @classmethod
    def of_size(cls, center_row: int, center_col: int, n: int) -> Window:
        if n < 1 or n % 2 == 0:
            raise ValueError(f"window side must be odd and positive, got {n}")
        return cls(center_row, center_col, n // 2)


@dataclass(frozen=True, eq=False)
class RasterStack:
    transform: GeoTransform
    variables: tuple[str, ...]
    timestamps: tuple[dt.date, ...]
    values: np.ndarray = field(repr=False)
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "timestamps", tuple(self.timestamps))
        values = np.asarray(self.values, dtype=np.float32)
        if values.flags.writeable or not values.flags.c_contiguous:
            values = np.array(values, order="C")  # private copy; the caller's array stays writable
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        expected = (len(self.variables), max(1, len(self.timestamps)), *self.transform.shape)
        if values.shape != expected:
            raise ValueError(f"values shape {values.shape} does not match header extents {expected}")
        if len(set(self.variables)) != len(self.variables):
            raise ValueError("variable names must be unique")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if not a < b:
                raise ValueError(f"timestamps must be strictly increasing ({a} then {b})")
        bad = ~np.isfinite(values) & (values != np.float32(self.nodata))
        if bad.any():
            raise ValueError("values must be finite or equal to the nodata sentinel")

    @property
    def is_static(self) -> bool:
        return not self.timestamps

    def time_index(self, day: dt.date) -> int:
        try:
            return self.timestamps.index(day)
        except ValueError:
            raise KeyError(f"no timestamp {day.isoformat()} in stack") from None

    def nodata_mask(self) -> np.ndarray:
        return self.values == np.float32(self.nodata)


def extract_window(rs: RasterStack, w: Window, time_slice: slice | range | None = None) -> np.ndarray:
    """Cut an n x n window, returned as ``[time][row][col][variable]``.

    The window must lie entirely inside the raster; otherwise :class:`WindowClipped`.
    Nodata values pass through unchanged.
    """
    hw = w.half_width
    r0, c0 = w.center_row - hw, w.center_col - hw
    r1, c1 = w.center_row + hw + 1, w.center_col + hw + 1
    if r0 < 0 or c0 < 0 or r1 > rs.transform.n_rows or c1 > rs.transform.n_cols:
        raise WindowClipped(
            f"window of side {w.size} at ({w.center_row}, {w.center_col}) leaves raster {rs.transform.shape}"
        )
    n_time = rs.values.shape[1]
    if time_slice is None:
        time_slice = slice(0, n_time)
    elif isinstance(time_slice, range):
        time_slice = slice(time_slice.start, time_slice.stop, time_slice.step)
    start, stop, step = time_slice.indices(n_time)
    if (time_slice.start is not None and not 0 <= time_slice.start < n_time) or (
        time_slice.stop is not None and time_slice.stop > n_time
    ):
        raise IndexError(f"time slice {time_slice} outside 0..{n_time}")
    block = rs.values[:, start:stop:step, r0:r1, c0:c1]
    return np.ascontiguousarray(block.transpose(1, 2, 3, 0))


# --- LGRS file format -------------------------------------------------------
#
#   LGRS1
#   origin_lon=<float>            (repr, round-trips exactly)
#   origin_lat=<float>
#   pixel_size_lon=<float>
#   pixel_size_lat=<float>
#   n_rows=<int>
#   n_cols=<int>
#   variables=<name>,<name>,...
#   timestamps=<YYYY-MM-DD>,...   (empty for static stacks)
#   nodata=<float>
#   count=<number of float32 elements>
#   <blank line>
#   <count little-endian float32 values, [variable][time][row][col]>
#   <FNV-1a 64-bit checksum of the payload bytes, little-endian uint64>

_HEADER_KEYS = (
    "origin_lon", "origin_lat", "pixel_size_lon", "pixel_size_lat",
    "n_rows", "n_cols", "variables", "timestamps", "nodata", "count",
)


def encode_stack(rs: RasterStack) -> bytes:
    for name in rs.variables:
        if not name or any(ch in name for ch in ",=\n\r"):
            raise ValueError(f"variable name {name!r} cannot be stored in an LGRS header")
    gt = rs.transform
    payload = rs.values.astype("<f4", copy=False).tobytes(order="C")
    lines = [
        LGRS_MAGIC,
        f"origin_lon={gt.origin_lon!r}",
        f"origin_lat={gt.origin_lat!r}",
        f"pixel_size_lon={gt.pixel_size_lon!r}",
        f"pixel_size_lat={gt.pixel_size_lat!r}",
        f"n_rows={gt.n_rows}",
        f"n_cols={gt.n_cols}",
        "variables=" + ",".join(rs.variables),
        "timestamps=" + ",".join(t.isoformat() for t in rs.timestamps),
        f"nodata={float(rs.nodata)!r}",
        f"count={rs.values.size}",
        "",
        "",
    ]
    checksum = fnv1a64(payload).to_bytes(8, "little")
    return "\n".join(lines).encode("ascii") + payload + checksum


def write_stack(rs: RasterStack, path) -> None:
    Path(path).write_bytes(encode_stack(rs))


def _parse_header(raw: bytes) -> tuple[dict[str, str], int]:
    end = raw.find(b"\n\n")
    if end < 0:
        raise MalformedHeader("header is not terminated by a blank line")
    try:
        text = raw[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedHeader(f"header is not ASCII: {exc}") from None
    lines = text.split("\n")
    if lines[0] != LGRS_MAGIC:
        raise MalformedHeader(f"bad magic {lines[0]!r}, expected {LGRS_MAGIC!r}")
    fields = {}
    for lineno, line in enumerate(lines[1:], start=2):
        key, sep, value = line.partition("=")
        if not sep:
            raise MalformedHeader(f"header line {lineno} is not key=value: {line!r}")
        if key in fields:
            raise MalformedHeader(f"duplicate header key {key!r}")
        fields[key] = value
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise MalformedHeader(f"header missing keys {missing}")
    return fields, end + 2


def decode_stack(raw: bytes) -> RasterStack:
    fields, offset = _parse_header(raw)
    try:
        gt = GeoTransform(
            origin_lon=float(fields["origin_lon"]),
            origin_lat=float(fields["origin_lat"]),
            pixel_size_lon=float(fields["pixel_size_lon"]),
            pixel_size_lat=float(fields["pixel_size_lat"]),
            n_rows=int(fields["n_rows"]),
            n_cols=int(fields["n_cols"]),
        )
        variables = tuple(v for v in fields["variables"].split(",") if v)
        timestamps = tuple(dt.date.fromisoformat(t) for t in fields["timestamps"].split(",") if t)
        nodata = float(fields["nodata"])
        count = int(fields["count"])
    except ValueError as exc:
        raise MalformedHeader(f"unparseable header value: {exc}") from None
    expected = len(variables) * max(1, len(timestamps)) * gt.n_rows * gt.n_cols
    if count != expected:
        raise ExtentMismatch(
            f"header count {count} disagrees with {len(variables)} variables x "
            f"{max(1, len(timestamps))} times x {gt.n_rows} x {gt.n_cols} = {expected}"
        )
    body = raw[offset:]
    if len(body) != 4 * count + 8:
        raise ExtentMismatch(f"payload holds {len(body) - 8} bytes, header declares {4 * count}")
    payload, stored = body[:-8], int.from_bytes(body[-8:], "little")
    if fnv1a64(payload) != stored:
        raise ChecksumMismatch("payload checksum does not match")
    values = np.frombuffer(payload, dtype="<f4").reshape(
        len(variables), max(1, len(timestamps)), gt.n_rows, gt.n_cols
    )
    return RasterStack(gt, variables, timestamps, values, nodata)


def read_stack(path) -> RasterStack:
    return decode_stack(Path(path).read_bytes())
