"""Worker-count policy and order-preserving parallel feature extraction."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from .embed import FEATURE_DIM, extract_features


def n_threads() -> int:
    """Worker cap from ``IOVPR_THREADS`` (default: CPU count)."""
    raw = os.environ.get("IOVPR_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def feature_matrix(items: Sequence, transform=None) -> np.ndarray:
    """Stack ``extract_features(item.image())`` for each item, in input order."""

    def one(it):
        img = it.image()
        if transform is not None:
            img = transform(it, img)
        return extract_features(img)

    workers = n_threads()
    if workers == 1 or len(items) < 2:
        rows = [one(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(one, items))
    if not rows:
        return np.empty((0, FEATURE_DIM))
    return np.array(rows)
