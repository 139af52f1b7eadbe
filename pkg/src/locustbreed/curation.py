"""Presence ingestion, buffered pseudo-absence sampling and chronological splits."""
from __future__ import annotations

import csv
import datetime as dt
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import EARTH_RADIUS_KM, buffer_clear

OBSERVATION_COLUMNS = ("id", "lon", "lat", "date", "stage", "instar")
CURATED_COLUMNS = OBSERVATION_COLUMNS + ("label", "provenance", "split")

PRESENCE = "presence"
PSEUDO_ABSENCE = "pseudo_absence"
SPLIT_NAMES = ("train", "validation", "test")

BREEDING_STAGES = frozenset({"laying"})
EARLY_INSTARS = frozenset({"1", "2"})
KM_PER_DEGREE = 111.32
MAX_CONSECUTIVE_REJECTIONS = 10**6


class CurationError(Exception):
    pass


class MissingColumn(CurationError):
    pass


class DuplicateId(CurationError):
    pass


class FeasibilityError(CurationError):
    pass


@dataclass(frozen=True)
class ObservationRecord:
    id: str
    lon: float
    lat: float
    obs_date: dt.date
    label: int
    provenance: str
    stage: str = ""
    instar: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.provenance not in (PRESENCE, PSEUDO_ABSENCE):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.label == 1 and self.provenance != PRESENCE:
            raise ValueError("breeding label requires a presence record")
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise ValueError(f"coordinate ({self.lon}, {self.lat}) out of range")


@dataclass(frozen=True)
class Rejection:
    """A record (or CSV row) that was dropped, and why."""

    where: str
    reason: str


DateRange = tuple[dt.date, dt.date]


@dataclass(frozen=True)
class SplitSpec:
    train: DateRange
    validation: DateRange
    test: DateRange

    def __post_init__(self):
        ranges = self.ranges()
        for name, (lo, hi) in ranges.items():
            if lo > hi:
                raise ValueError(f"{name} range starts after it ends")
        ordered = list(ranges.values())
        for (_, hi), (lo, _) in zip(ordered, ordered[1:]):
            if not hi < lo:
                raise ValueError("split ranges must be disjoint and chronologically ordered")

    def ranges(self) -> dict[str, DateRange]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def split_of(self, day: dt.date) -> str | None:
        for name, (lo, hi) in self.ranges().items():
            if lo <= day <= hi:
                return name
        return None


DEFAULT_SPLITS = SplitSpec(
    train=(dt.date(2020, 1, 1), dt.date(2021, 4, 21)),
    validation=(dt.date(2021, 4, 22), dt.date(2021, 7, 9)),
    test=(dt.date(2021, 7, 10), dt.date(2023, 7, 30)),
)


@dataclass(frozen=True)
class CurationConfig:
    sampling_bbox: tuple[float, float, float, float]  # (lon_min, lat_min, lon_max, lat_max)
    buffer_radius: float = 0.2
    ratio: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.buffer_radius > 0:
            raise ValueError("buffer_radius must be positive")
        if not self.ratio > 0:
            raise ValueError("ratio must be positive")
        lon0, lat0, lon1, lat1 = self.sampling_bbox
        if not (lon0 < lon1 and lat0 < lat1):
            raise ValueError(f"degenerate sampling bbox {self.sampling_bbox}")


def is_breeding_report(stage: str, instar: str) -> bool:
    return stage.strip().lower() in BREEDING_STAGES or instar.strip() in EARLY_INSTARS


def ingest_presences(path) -> tuple[list[ObservationRecord], list[Rejection]]:
    """Read an observation CSV and keep breeding reports as presences.

    Returns the presences and the rows rejected as unparseable (row numbers
    count the header as row 1). Non-breeding rows are discarded silently.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:  # zero-byte file
            return [], []
        missing = [c for c in OBSERVATION_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise MissingColumn(f"observation CSV lacks columns {missing}")
        records, rejected, seen = [], [], {}
        for rowno, row in enumerate(reader, start=2):
            rid = (row["id"] or "").strip()
            if not rid:
                rejected.append(Rejection(f"row {rowno}", "empty id"))
                continue
            if rid in seen:
                raise DuplicateId(f"id {rid!r} on row {rowno} already used on row {seen[rid]}")
            seen[rid] = rowno
            try:
                lon, lat = float(row["lon"]), float(row["lat"])
                if not (math.isfinite(lon) and math.isfinite(lat)):
                    raise ValueError("non-finite coordinate")
                obs_date = dt.date.fromisoformat(row["date"].strip())
            except (ValueError, AttributeError) as exc:
                rejected.append(Rejection(f"row {rowno}", f"unparseable coordinate or date: {exc}"))
                continue
            stage, instar = (row["stage"] or "").strip(), (row["instar"] or "").strip()
            if not is_breeding_report(stage, instar):
                continue
            try:
                records.append(ObservationRecord(rid, lon, lat, obs_date, 1, PRESENCE, stage, instar))
            except ValueError as exc:
                rejected.append(Rejection(f"row {rowno}", str(exc)))
    return records, rejected


def haversine_km(lon1, lat1, lon2, lat2):
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def generate_pseudo_absences(
    presences: list[ObservationRecord], cfg: CurationConfig, block: int = 1024
) -> list[ObservationRecord]:
    """Sample ``ceil(ratio * |presences|)`` pseudo-absences outside every presence buffer.

    Candidates are drawn uniformly over the bbox in blocks and accepted in draw
    order. Each absence copies the date of a presence taken from a shuffled
    cycle through the presences, so at ratio 1 every presence date is used
    exactly once and each date range stays balanced.
    """
    if not presences:
        raise CurationError("no presence records")
    n_target = math.ceil(cfg.ratio * len(presences))
    rng = np.random.default_rng(cfg.rng_seed)
    lon0, lat0, lon1, lat1 = cfg.sampling_bbox
    plon = np.array([p.lon for p in presences])
    plat = np.array([p.lat for p in presences])
    radius_km = cfg.buffer_radius * KM_PER_DEGREE

    cycles = math.ceil(n_target / len(presences))
    date_source = np.concatenate([rng.permutation(len(presences)) for _ in range(cycles)])[:n_target]

    accepted_lon, accepted_lat = [], []
    consecutive = 0
    while len(accepted_lon) < n_target:
        cand_lon = rng.uniform(lon0, lon1, block)
        cand_lat = rng.uniform(lat0, lat1, block)
        ok = buffer_clear(cand_lon, cand_lat, plon, plat, radius_km)
        for i in range(block):
            if ok[i]:
                accepted_lon.append(float(cand_lon[i]))
                accepted_lat.append(float(cand_lat[i]))
                consecutive = 0
                if len(accepted_lon) == n_target:
                    break
            else:
                consecutive += 1
                if consecutive >= MAX_CONSECUTIVE_REJECTIONS:
                    raise FeasibilityError(
                        f"{consecutive} consecutive candidates fell inside a buffer of "
                        f"{cfg.buffer_radius} deg; enlarge the bbox or shrink the buffer"
                    )
    width = max(6, len(str(n_target)))
    return [
        ObservationRecord(
            id=f"pa-{i:0{width}d}",
            lon=accepted_lon[i],
            lat=accepted_lat[i],
            obs_date=presences[date_source[i]].obs_date,
            label=0,
            provenance=PSEUDO_ABSENCE,
        )
        for i in range(n_target)
    ]


@dataclass
class SplitResult:
    partitions: dict[str, list[ObservationRecord]]
    rejected: list[Rejection] = field(default_factory=list)

    def __getitem__(self, name: str) -> list[ObservationRecord]:
        return self.partitions[name]

    def class_counts(self) -> dict[str, dict[int, int]]:
        return {
            name: {0: sum(r.label == 0 for r in recs), 1: sum(r.label == 1 for r in recs)}
            for name, recs in self.partitions.items()
        }


def assign_splits(records: list[ObservationRecord], spec: SplitSpec = DEFAULT_SPLITS) -> SplitResult:
    parts = {name: [] for name in SPLIT_NAMES}
    rejected = []
    for rec in records:
        name = spec.split_of(rec.obs_date)
        if name is None:
            rejected.append(Rejection(rec.id, f"date {rec.obs_date.isoformat()} outside every split range"))
        else:
            parts[name].append(rec)
    return SplitResult(parts, rejected)


def curated_csv(splits: SplitResult) -> str:
    """Serialise split records as the curated CSV (deterministic ordering)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURATED_COLUMNS)
    for name in SPLIT_NAMES:
        for r in sorted(splits[name], key=lambda r: (r.obs_date, r.id)):
            writer.writerow([
                r.id, repr(r.lon), repr(r.lat), r.obs_date.isoformat(), r.stage, r.instar,
                r.label, r.provenance, name,
            ])
    return buf.getvalue()


def read_curated(path) -> dict[str, list[ObservationRecord]]:
    parts = {name: [] for name in SPLIT_NAMES}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CURATED_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise MissingColumn(f"curated CSV lacks columns {missing}")
        for rowno, row in enumerate(reader, start=2):
            try:
                rec = ObservationRecord(
                    id=row["id"], lon=float(row["lon"]), lat=float(row["lat"]),
                    obs_date=dt.date.fromisoformat(row["date"]), label=int(row["label"]),
                    provenance=row["provenance"], stage=row["stage"], instar=row["instar"],
                )
            except ValueError as exc:
                raise CurationError(f"curated CSV row {rowno}: {exc}") from None
            if row["split"] not in parts:
                raise CurationError(f"curated CSV row {rowno}: unknown split {row['split']!r}")
            parts[row["split"]].append(rec)
    return parts


def summary_table(splits: SplitResult, spec: SplitSpec) -> list[dict]:
    """Per-split class counts and date ranges."""
    counts = splits.class_counts()
    return [
        {
            "split": name,
            "non_breeding": counts[name][0],
            "breeding": counts[name][1],
            "date_range": f"{lo.isoformat()} to {hi.isoformat()}",
        }
        for name, (lo, hi) in spec.ranges().items()
    ]


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="")
