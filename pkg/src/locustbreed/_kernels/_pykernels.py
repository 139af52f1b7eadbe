"""Pure-Python/numpy implementations of the hot kernels.

Semantics here are the reference; the Cython module must match them.
"""
from __future__ import annotations

import math

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

# 111.32 km per degree along a great circle
EARTH_RADIUS_KM = 111.32 * 180.0 / math.pi


def fnv1a64(data) -> int:
    h = FNV_OFFSET
    for b in memoryview(data).cast("B"):
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def _out_shape(spatial, kernel, stride):
    out = tuple((s - k) // st + 1 for s, k, st in zip(spatial, kernel, stride))
    if any(o < 1 for o in out):
        raise ValueError(f"kernel {tuple(kernel)} larger than padded input {tuple(spatial)}")
    return out


def im2col(xpad: np.ndarray, kernel, stride) -> np.ndarray:
    """Unfold ``xpad[N, C, *spatial]`` into ``cols[N, C*prod(kernel), prod(out)]``.

    Row index is ``c * prod(kernel) + k`` with ``k`` the row-major kernel offset.
    """
    kernel, stride = tuple(kernel), tuple(stride)
    n, c = xpad.shape[:2]
    out = _out_shape(xpad.shape[2:], kernel, stride)
    ksize = math.prod(kernel)
    cols = np.empty((n, c, ksize) + out, dtype=np.float64)
    for idx, offs in enumerate(np.ndindex(*kernel)):
        sl = tuple(slice(o, o + st * (od - 1) + 1, st) for o, st, od in zip(offs, stride, out))
        cols[:, :, idx] = xpad[(slice(None), slice(None)) + sl]
    return cols.reshape(n, c * ksize, math.prod(out))


def col2im(cols: np.ndarray, shape, kernel, stride) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back into a padded array."""
    kernel, stride = tuple(kernel), tuple(stride)
    n, c = shape[:2]
    out = _out_shape(shape[2:], kernel, stride)
    ksize = math.prod(kernel)
    cols = cols.reshape((n, c, ksize) + out)
    x = np.zeros(shape, dtype=np.float64)
    for idx, offs in enumerate(np.ndindex(*kernel)):
        sl = tuple(slice(o, o + st * (od - 1) + 1, st) for o, st, od in zip(offs, stride, out))
        x[(slice(None), slice(None)) + sl] += cols[:, :, idx]
    return x


def buffer_clear(cand_lon, cand_lat, pres_lon, pres_lat, radius_km: float) -> np.ndarray:
    """For each candidate, True when every presence lies strictly farther than ``radius_km``.

    Distances are haversine great-circle distances; the comparison is done on the
    haversine term so no inverse trig is needed.
    """
    cand_lon = np.radians(np.asarray(cand_lon, dtype=np.float64))
    cand_lat = np.radians(np.asarray(cand_lat, dtype=np.float64))
    plon = np.radians(np.asarray(pres_lon, dtype=np.float64))
    plat = np.radians(np.asarray(pres_lat, dtype=np.float64))
    limit = math.sin(radius_km / (2.0 * EARTH_RADIUS_KM)) ** 2
    cos_plat = np.cos(plat)
    clear = np.ones(cand_lon.shape[0], dtype=bool)
    chunk = 256
    for start in range(0, cand_lon.shape[0], chunk):
        lo = cand_lon[start:start + chunk, None]
        la = cand_lat[start:start + chunk, None]
        a = np.sin((plat - la) * 0.5) ** 2 + np.cos(la) * cos_plat * np.sin((plon - lo) * 0.5) ** 2
        clear[start:start + chunk] = np.all(a > limit, axis=1)
    return clear
