"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when it imports; otherwise the numpy
fallback. Set ``IOVPR_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import logging
import os

import numpy as np

from . import _fallback

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("IOVPR_BACKEND", "").lower() not in ("python", "numpy", "fallback"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        log.debug("compiled kernels unavailable, using numpy fallback")

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback


def haversine_many(lat0: float, lon0: float, lats, lons) -> np.ndarray:
    """Great-circle distances in meters from one point to many."""
    lats = np.ascontiguousarray(lats, dtype=np.float64)
    lons = np.ascontiguousarray(lons, dtype=np.float64)
    return _impl.haversine_many(float(lat0), float(lon0), lats, lons)


def sqdist_block(gallery, queries) -> np.ndarray:
    """Squared Euclidean distance matrix of shape (n_queries, n_gallery)."""
    gallery = np.ascontiguousarray(gallery, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    return _impl.sqdist_block(gallery, queries)


def bilinear_sample_wrap(img, rows, cols) -> np.ndarray:
    """Sample an HxWxC uint8 image at fractional (row, col) positions."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim == 2:
        img = img[:, :, None]
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    return _impl.bilinear_sample_wrap(img, rows, cols)
