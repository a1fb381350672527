"""Inside Out Data Augmentation.

A street-view query ``q`` is placed behind the windows of an indoor layout
``c``: window pixels (mask bit 1) come from ``q``, everything else from ``c``.
Gray layouts replace the non-window pixels by the ImageNet mean colour so the
indoor content carries no information.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import imageio

LAYOUT_SHAPE = (480, 640)
# ImageNet mean (0.485, 0.456, 0.406) * 255, rounded
GRAY_FILL = np.array([124, 116, 104], dtype=np.uint8)
THRESHOLD_PRESETS = {"5": 0.05, "10": 0.10, "20": 0.20, "30": 0.30}


class LayoutKind(str, enum.Enum):
    REAL = "real"
    GRAY = "gray"


@dataclass
class LayoutRecord:
    image: np.ndarray
    mask: np.ndarray
    window_proportion: float
    kind: LayoutKind = LayoutKind.REAL
    layout_id: str = ""

    @classmethod
    def from_arrays(cls, image, mask, kind=LayoutKind.REAL, layout_id="") -> "LayoutRecord":
        mask = as_mask(mask)
        if mask.shape != image.shape[:2]:
            raise ValueError("mask and layout image dimensions differ")
        return cls(image, mask, window_proportion(mask), LayoutKind(kind), layout_id)


def as_mask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    if m.dtype != np.uint8 or m.max(initial=0) > 1:
        m = (m != 0).astype(np.uint8)
    return m


def binarize_annotation(annotation: np.ndarray, window_ids) -> np.ndarray:
    """1 where the class id is one of ``window_ids``."""
    return np.isin(np.asarray(annotation), list(window_ids)).astype(np.uint8)


def window_proportion(mask: np.ndarray) -> float:
    m = np.asarray(mask)
    if m.size == 0:
        raise ValueError("empty mask")
    return int(np.count_nonzero(m)) / m.size


def make_gray_layout(layout: LayoutRecord) -> LayoutRecord:
    if layout.kind is not LayoutKind.REAL:
        raise ValueError("layout is already gray")
    img = layout.image.copy()
    img[layout.mask == 0] = GRAY_FILL
    return replace(layout, image=img, kind=LayoutKind.GRAY)


def composite(q: np.ndarray, mask: np.ndarray, layout: np.ndarray) -> np.ndarray:
    """``q * b + c * (1 - b)`` as an exact per-pixel copy."""
    if q.shape != layout.shape or q.shape[:2] != mask.shape:
        raise ValueError(f"shape mismatch: query {q.shape}, mask {mask.shape}, layout {layout.shape}")
    return np.where(mask[..., None] != 0, q, layout)


def filter_layouts(layouts: Sequence[LayoutRecord], threshold: float) -> list[LayoutRecord]:
    """Keep layouts whose window proportion is strictly above ``threshold``."""
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    return [lay for lay in layouts if lay.window_proportion > threshold]


def prepare_layout(image: np.ndarray, mask: np.ndarray, kind=LayoutKind.REAL, layout_id="",
                   shape=LAYOUT_SHAPE) -> LayoutRecord:
    """Resize to the query size (image bilinear, mask nearest) and wrap as a record."""
    img = imageio.resize_bilinear(image, *shape)
    m = imageio.resize_nearest(as_mask(mask), *shape)
    rec = LayoutRecord.from_arrays(img, m, LayoutKind.REAL, layout_id)
    return make_gray_layout(rec) if LayoutKind(kind) is LayoutKind.GRAY else rec


def pair_layouts(n_queries: int, n_layouts: int, rng: np.random.Generator) -> np.ndarray:
    """Layout index for each query, drawn uniformly with replacement."""
    if n_layouts == 0:
        raise ValueError("no layouts to pair with")
    return rng.integers(0, n_layouts, size=n_queries)


class MaskProvider(Protocol):
    def __call__(self, image: np.ndarray, key: str | None = None) -> np.ndarray: ...


class FullFrameMaskProvider:
    """Treats the whole image as window."""

    def __call__(self, image, key=None):
        return np.ones(image.shape[:2], dtype=np.uint8)


class ThresholdMaskProvider:
    """Window = pixels whose mean channel intensity is above ``threshold``."""

    def __init__(self, threshold: float = 200.0):
        self.threshold = threshold

    def __call__(self, image, key=None):
        return (image.mean(axis=2) > self.threshold).astype(np.uint8)


class FileMaskProvider:
    """Looks up precomputed ``<key>.png`` masks (0/255) in a directory.

    This is how masks from an external segmentation network enter the pipeline.
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def __call__(self, image, key=None):
        if key is None:
            raise ValueError("FileMaskProvider needs an image key")
        mask = imageio.read_mask(self.directory / f"{key}.png")
        return imageio.resize_nearest(mask, *image.shape[:2])


def gray_query(image: np.ndarray, provider: MaskProvider, key: str | None = None) -> np.ndarray:
    """Inference-time gray layout: keep predicted window pixels, gray the rest."""
    mask = provider(image, key)
    fill = np.broadcast_to(GRAY_FILL, image.shape)
    return composite(image, mask, fill)


# --- layout manifests (JSON-Lines) -------------------------------------------

def layout_to_row(rec: LayoutRecord, image_path: str, mask_path: str) -> dict:
    return {
        "layout_id": rec.layout_id,
        "image_path": image_path,
        "mask_path": mask_path,
        "window_proportion": rec.window_proportion,
        "kind": rec.kind.value,
    }


def read_layout_manifest(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_layout_manifest(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_layouts(path, shape=LAYOUT_SHAPE) -> list[LayoutRecord]:
    """Load records from a layout manifest, resolving paths relative to it."""
    base = Path(path).parent
    out = []
    for row in read_layout_manifest(path):
        img = imageio.read_rgb(base / row["image_path"])
        mask = imageio.read_mask(base / row["mask_path"])
        rec = prepare_layout(img, mask, LayoutKind.REAL, row["layout_id"], shape)
        if LayoutKind(row.get("kind", "real")) is LayoutKind.GRAY:
            # stored gray images already carry the fill; keep them as-is
            rec = replace(rec, kind=LayoutKind.GRAY)
        out.append(rec)
    return out
