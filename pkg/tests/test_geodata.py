import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from locustbreed.geodata import (
    ChecksumMismatch,
    ExtentMismatch,
    GeoTransform,
    MalformedHeader,
    OutOfBounds,
    RasterStack,
    Window,
    WindowClipped,
    decode_stack,
    encode_stack,
    extract_window,
    read_stack,
    write_stack,
)

GT = GeoTransform(30.0, 20.0, 0.1, 0.1, 50, 60)


def _stack(n_times=4, n_vars=2, gt=GT, seed=0):
    rng = np.random.default_rng(seed)
    days = tuple(dt.date(2021, 1, 1) + dt.timedelta(days=i) for i in range(n_times))
    values = rng.normal(size=(n_vars, max(1, n_times)) + gt.shape).astype(np.float32)
    return RasterStack(gt, tuple(f"v{i}" for i in range(n_vars)), days, values)


def test_origin_cell():
    assert GT.world_to_pixel(30.0, 20.0) == (0, 0)
    assert GT.world_to_pixel(30.05, 19.95) == (0, 0)
    assert GT.pixel_to_world(0, 0) == pytest.approx((30.05, 19.95))


def test_bounds_and_outside():
    assert GT.bounds == pytest.approx((30.0, 15.0, 36.0, 20.0))
    with pytest.raises(OutOfBounds):
        GT.world_to_pixel(36.0001, 18.0)
    with pytest.raises(OutOfBounds):
        GT.world_to_pixel(31.0, 20.0001)


@given(st.integers(0, 49), st.integers(0, 59))
def test_pixel_world_round_trip(row, col):
    assert GT.world_to_pixel(*GT.pixel_to_world(row, col)) == (row, col)


def test_subgrid_aligns_with_parent():
    sub = GT.subgrid(5, 7, 3, 4)
    assert sub.pixel_to_world(0, 0) == pytest.approx(GT.pixel_to_world(5, 7))
    assert sub.shape == (3, 4)


def test_window_extraction_layout():
    rs = _stack()
    w = extract_window(rs, Window(10, 12), slice(1, 3))
    assert w.shape == (2, 7, 7, 2)
    assert w[1, 0, 0, 1] == rs.values[1, 2, 7, 9]
    assert w[0, 3, 3, 0] == rs.values[0, 1, 10, 12]


@pytest.mark.parametrize("row, col", [(2, 10), (10, 57), (47, 10), (10, 2)])
def test_window_clipped(row, col):
    with pytest.raises(WindowClipped):
        extract_window(_stack(), Window(row, col))


def test_window_at_edge_fits():
    assert extract_window(_stack(), Window(3, 56)).shape == (4, 7, 7, 2)


def test_stack_validation():
    with pytest.raises(ValueError, match="increasing"):
        RasterStack(GT, ("a",), (dt.date(2021, 1, 2), dt.date(2021, 1, 1)), np.zeros((1, 2, 50, 60)))
    with pytest.raises(ValueError, match="shape"):
        RasterStack(GT, ("a",), (), np.zeros((1, 2, 50, 60)))
    with pytest.raises(ValueError, match="finite"):
        RasterStack(GT, ("a",), (), np.full((1, 1, 50, 60), np.nan))


def test_lgrs_round_trip(tmp_path):
    rs = _stack()
    rs_static = _stack(n_times=0, n_vars=3)
    for s in (rs, rs_static):
        write_stack(s, tmp_path / "x.lgrs")
        back = read_stack(tmp_path / "x.lgrs")
        assert back.transform == s.transform
        assert back.variables == s.variables and back.timestamps == s.timestamps
        np.testing.assert_array_equal(back.values, s.values)


def test_lgrs_encoding_is_deterministic():
    assert encode_stack(_stack()) == encode_stack(_stack())


def test_lgrs_checksum_detects_corruption():
    raw = bytearray(encode_stack(_stack()))
    raw[-20] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        decode_stack(bytes(raw))


def test_lgrs_header_errors():
    raw = encode_stack(_stack())
    with pytest.raises(MalformedHeader):
        decode_stack(b"XXXX" + raw[4:])
    with pytest.raises(ExtentMismatch):
        decode_stack(raw.replace(b"n_rows=50", b"n_rows=51"))
    with pytest.raises(ExtentMismatch):
        decode_stack(raw[:-12] + raw[-8:])
    with pytest.raises(MalformedHeader):
        decode_stack(raw.replace(b"nodata=", b"nodatum="))


def test_stack_does_not_freeze_caller_array():
    vals = np.zeros((1, 1) + GT.shape, dtype=np.float32)
    rs = RasterStack(GT, ("a",), (), vals)
    vals[0, 0, 0, 0] = 5.0
    assert rs.values[0, 0, 0, 0] == 0.0
    assert not rs.values.flags.writeable
