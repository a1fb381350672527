"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Operation order follows the compiled code so both backends round identically.
"""
from __future__ import annotations

import numpy as np

EARTH_RADIUS_M = 6371000.0
DEG = 0.017453292519943295


def haversine_many(lat0: float, lon0: float, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    phi0 = lat0 * DEG
    lam0 = lon0 * DEG
    phi = lats * DEG
    dphi = phi - phi0
    dlam = lons * DEG - lam0
    s1 = np.sin(dphi * 0.5)
    s2 = np.sin(dlam * 0.5)
    a = s1 * s1 + np.cos(phi0) * np.cos(phi) * s2 * s2
    np.clip(a, 0.0, 1.0, out=a)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(a))


def sqdist_block(gallery: np.ndarray, queries: np.ndarray) -> np.ndarray:
    if queries.shape[1] != gallery.shape[1]:
        raise ValueError("dimension mismatch")
    out = np.zeros((queries.shape[0], gallery.shape[0]), dtype=np.float64)
    # accumulate one coordinate at a time: same summation order as the C loop
    for k in range(gallery.shape[1]):
        t = gallery[None, :, k] - queries[:, k, None]
        out += t * t
    return out


def bilinear_sample_wrap(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    H, W = img.shape[:2]
    if rows.shape != cols.shape:
        raise ValueError("rows/cols shape mismatch")
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = (rows - r0)[..., None]
    fc = (cols - c0)[..., None]
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    ri0 = np.clip(r0, 0, H - 1)
    ri1 = np.clip(r0 + 1, 0, H - 1)
    ci0 = c0 % W
    ci1 = (c0 + 1) % W

    def px(r, c):  # gather first, then widen: converting the whole image costs more than sampling it
        return img[r, c].astype(np.float64)

    top = px(ri0, ci0) * (1.0 - fc) + px(ri0, ci1) * fc
    bot = px(ri1, ci0) * (1.0 - fc) + px(ri1, ci1) * fc
    v = np.floor(top * (1.0 - fr) + bot * fr + 0.5)
    np.clip(v, 0.0, 255.0, out=v)
    return v.astype(np.uint8)
