import datetime as dt

import numpy as np
import pytest

from locustbreed.curation import PRESENCE, PSEUDO_ABSENCE, ObservationRecord
from locustbreed.features import (
    IGNORE,
    FeatureConfig,
    FeatureSet,
    InsufficientHistory,
    LFTFormatError,
    MissingPeriod,
    SampleRejected,
    build_chip,
    build_chip_features,
    build_rs_features,
    build_static_block,
    build_temporal_block,
    compose_chip,
    decode_features,
    encode_features,
    fit_normalization,
    flatten_concat,
    label_mask,
    normalize,
    period_bounds,
    resample_3day_means,
    unflatten,
)
from locustbreed.geodata import RasterStack
from synth import grid, image_stack, static_stack, temporal_stack

GT = grid(20, 20)
START = dt.date(2021, 1, 1)
TEMPORAL = temporal_stack(GT, START, 120, seed=0)
STATIC = static_stack(GT, seed=1)


def _rec(row, col, day, label=1, rid="r"):
    lon, lat = GT.pixel_to_world(row, col)
    prov = PRESENCE if label else PSEUDO_ABSENCE
    return ObservationRecord(rid, lon, lat, day, label, prov)


def test_resample_matches_loop():
    rng = np.random.default_rng(0)
    daily = rng.normal(size=(12, 2, 3))
    daily[4, 1, 2] = -9999.0
    got = resample_3day_means(daily)
    for k in range(4):
        for idx in np.ndindex(2, 3):
            vals = [daily[3 * k + d][idx] for d in range(3) if daily[3 * k + d][idx] != -9999.0]
            assert got[k][idx] == pytest.approx(sum(vals) / len(vals), abs=1e-15)


def test_resample_all_nodata_period():
    daily = np.zeros((6, 1))
    daily[3:6, 0] = -9999.0
    with pytest.raises(SampleRejected) as exc:
        resample_3day_means(daily)
    assert exc.value.reason == "missing-temporal"


def test_temporal_block_matches_oracle():
    day = START + dt.timedelta(days=100)
    tb = build_temporal_block(_rec(9, 11, day), TEMPORAL)
    assert tb.values.shape == (30, 7, 7, 3)
    end = 100
    for k in (0, 17, 29):
        days = [end - 89 + 3 * k + d for d in range(3)]
        for i, j, v in [(0, 0, 0), (3, 3, 1), (6, 2, 2)]:
            want = np.mean([float(TEMPORAL.values[v, t, 9 - 3 + i, 11 - 3 + j]) for t in days])
            assert tb.values[k, i, j, v] == pytest.approx(want, abs=1e-12)


def test_temporal_block_needs_full_history():
    with pytest.raises(InsufficientHistory):
        build_temporal_block(_rec(9, 9, START + dt.timedelta(days=88)), TEMPORAL)
    build_temporal_block(_rec(9, 9, START + dt.timedelta(days=89)), TEMPORAL)
    with pytest.raises(InsufficientHistory):
        build_temporal_block(_rec(9, 9, START + dt.timedelta(days=200)), TEMPORAL)
    gappy = RasterStack(GT, TEMPORAL.variables,
                        TEMPORAL.timestamps[:50] + tuple(t + dt.timedelta(days=1) for t in TEMPORAL.timestamps[50:]),
                        TEMPORAL.values)
    with pytest.raises(InsufficientHistory):
        build_temporal_block(_rec(9, 9, gappy.timestamps[100]), gappy)


def test_static_block_and_flat_length():
    day = START + dt.timedelta(days=100)
    rec = _rec(9, 11, day)
    sb = build_static_block(rec, STATIC)
    assert sb.values.shape == (7, 7, 17)
    flat = flatten_concat(build_temporal_block(rec, TEMPORAL), sb)
    assert flat.values.shape == (5243,)
    tb2, sb2 = unflatten(flat, (30, 7, 7, 3), (7, 7, 17))
    np.testing.assert_array_equal(sb2.values, sb.values)


def test_static_nodata_rejected():
    vals = np.array(STATIC.values)
    vals[4, 0, 9, 10] = STATIC.nodata
    bad = RasterStack(GT, STATIC.variables, (), vals)
    with pytest.raises(SampleRejected) as exc:
        build_static_block(_rec(9, 11, START), bad)
    assert exc.value.reason == "missing-static"


def test_rs_features_rejections_and_order():
    day = START + dt.timedelta(days=100)
    recs = [_rec(9, 11, day, 1, "b"), _rec(1, 1, day, 0, "edge"), _rec(9, 9, day, 0, "a"),
            _rec(9, 9, START, 1, "early")]
    fs, rejected = build_rs_features(recs, TEMPORAL, STATIC)
    assert fs.ids == ["a", "b"]
    assert list(fs.labels) == [0, 1]
    assert {(r.where, r.reason) for r in rejected} == {("edge", "window-clipped"), ("early", "insufficient-history")}


def test_period_bounds():
    b = period_bounds(dt.date(2021, 3, 31), 3, 30)
    assert b[-1] == (dt.date(2021, 3, 2), dt.date(2021, 3, 31))
    assert b[0] == (dt.date(2021, 1, 1), dt.date(2021, 1, 30))


def test_chip_scene_selection():
    ig = grid(40, 40, px=0.01)
    stack = image_stack(ig, dt.date(2021, 1, 1), 9, every=10)
    cfg = FeatureConfig(chip_size=16, chip_periods=3, chip_period_days=30)
    end = dt.date(2021, 3, 31)
    vals = np.array(stack.values)
    # period 3 (Mar 2..31) holds scenes at Mar 2, 12, 22 -> indices 6, 7, 8
    vals[:, 8, 5, 5] = stack.nodata  # most recent scene has a hole, so Mar 12 wins
    s = RasterStack(ig, stack.variables, stack.timestamps, vals)
    chip, dates = compose_chip(s, 0, 0, end, cfg)
    assert chip.shape == (3, 6, 16, 16)
    assert dates[-1] == dt.date(2021, 3, 12)
    assert dates[0] == dt.date(2021, 1, 21)
    vals[:, 6:9, 5, 5] = stack.nodata
    with pytest.raises(SampleRejected) as exc:
        compose_chip(RasterStack(ig, stack.variables, stack.timestamps, vals), 0, 0, end, cfg)
    assert exc.value.reason == "missing-chip-pixels"
    with pytest.raises(MissingPeriod):
        compose_chip(s, 0, 0, dt.date(2021, 6, 30), cfg)


def test_label_mask_disk():
    m = label_mask(224, 8, 1)
    ii, jj = np.mgrid[0:224, 0:224]
    disk = (ii - 112) ** 2 + (jj - 112) ** 2 <= 64
    assert (m[disk] == 1).all() and (m[~disk] == IGNORE).all()
    assert int(disk.sum()) == 197


def test_full_size_chip_shape():
    ig = grid(230, 230, px=0.001)
    stack = image_stack(ig, dt.date(2021, 1, 1), 9, every=10)
    lon, lat = ig.pixel_to_world(115, 115)
    rec = ObservationRecord("c", lon, lat, dt.date(2021, 3, 31), 0, PSEUDO_ABSENCE)
    chip = build_chip(rec, stack)
    assert chip.values.shape == (3, 6, 224, 224)
    assert (chip.mask[112, 112], chip.mask[0, 0]) == (0, IGNORE)
    fs, rej = build_chip_features([rec], stack)
    assert fs.arrays["chip"].shape == (1, 3, 6, 224, 224) and not rej


def test_normalization_is_per_variable():
    rng = np.random.default_rng(0)
    fs = FeatureSet("rs", ["a", "b", "c"], np.array([0, 1, 0]),
                    {"temporal": rng.normal(3, 2, size=(3, 30, 7, 7, 3)), "static": rng.normal(size=(3, 7, 7, 17))})
    out = normalize(fs, fit_normalization(fs))
    t = out.arrays["temporal"].reshape(-1, 3)
    np.testing.assert_allclose(t.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(t.std(axis=0), 1, atol=1e-12)


def test_lft_round_trip_and_checksum():
    rng = np.random.default_rng(1)
    fs = FeatureSet("chip", ["x", "y"], np.array([1, 0]),
                    {"chip": rng.normal(size=(2, 3, 6, 8, 8)), "mask": np.full((2, 8, 8), IGNORE, np.uint8)})
    raw = encode_features(fs)
    back = decode_features(raw)
    assert back.ids == fs.ids and list(back.labels) == [1, 0]
    np.testing.assert_array_equal(back.arrays["chip"], fs.arrays["chip"].astype(np.float32))
    np.testing.assert_array_equal(back.arrays["mask"], fs.arrays["mask"])
    bad = bytearray(raw)
    bad[-9] ^= 1
    with pytest.raises(LFTFormatError):
        decode_features(bytes(bad))
