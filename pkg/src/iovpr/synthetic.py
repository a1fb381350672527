"""Synthetic city: street-view tiles whose pixels are a smooth function of location.

Used for desk-scale end-to-end runs. Each tile shows four facades side by side;
facade ``k`` is a grating whose orientation, brightness and colour come from
smooth random fields over the city, so nearby tiles look alike and distant
ones differ. Layouts are indoor rooms (walls, floor, furniture) with
rectangular windows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .augment import LayoutKind, LayoutRecord, make_gray_layout
from .geo import METERS_PER_DEGREE, GeoPoint
from .manifest import GeoImage
from .rng import stage_rng

TILE_H, TILE_W = 480, 640
N_FACADES = 4
ORIGIN = GeoPoint(52.3700, 4.8900)


class SmoothField:
    """Sum of random plane waves over local metric coordinates, squashed to [0, 1)."""

    def __init__(self, rng: np.random.Generator, n_waves: int = 3, wavelength=(70.0, 180.0)):
        ang = rng.uniform(0, 2 * math.pi, n_waves)
        lam = rng.uniform(*wavelength, n_waves)
        self.k = np.stack([np.cos(ang), np.sin(ang)], axis=1) * (2 * math.pi / lam)[:, None]
        self.phase = rng.uniform(0, 2 * math.pi, n_waves)
        self.scale = 1.0 / n_waves

    def __call__(self, x: float, y: float) -> float:
        s = float(np.sum(np.sin(self.k[:, 0] * x + self.k[:, 1] * y + self.phase))) * self.scale
        return 0.5 + 0.5 * math.tanh(1.5 * s)


@dataclass
class CityConfig:
    n_gallery: int = 2000
    spacing: float = 8.0
    n_train_queries: int = 300
    n_test_queries: int = 100
    query_offset: float = 4.0
    seed: int = 0


class SyntheticCity:
    def __init__(self, config: CityConfig | None = None):
        self.config = config or CityConfig()
        c = self.config
        rng = stage_rng(c.seed, "city/fields")
        self.orient = [SmoothField(rng) for _ in range(N_FACADES)]
        self.bright = [SmoothField(rng) for _ in range(N_FACADES)]
        self.hue = [SmoothField(rng) for _ in range(N_FACADES)]
        self.period = rng.uniform(48.0, 72.0, N_FACADES)
        cols = math.ceil(math.sqrt(c.n_gallery * 1.25))
        grid = [(i % cols, i // cols) for i in range(c.n_gallery)]
        jit = stage_rng(c.seed, "city/gallery").uniform(-1.0, 1.0, (c.n_gallery, 2))
        self.gallery_xy = np.array([(gx * c.spacing, gy * c.spacing) for gx, gy in grid]) + jit
        qrng = stage_rng(c.seed, "city/queries")
        n_q = c.n_train_queries + c.n_test_queries
        anchor = qrng.choice(c.n_gallery, size=n_q, replace=False)
        r = c.query_offset * np.sqrt(qrng.uniform(0, 1, n_q))
        a = qrng.uniform(0, 2 * math.pi, n_q)
        self.query_xy = self.gallery_xy[anchor] + np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
        self.query_style = qrng.uniform(-1.0, 1.0, (n_q, 3))  # brightness, shift, noise seed
        self._rows = np.arange(TILE_H, dtype=np.float32)
        self._cols = np.arange(TILE_W // N_FACADES, dtype=np.float32)

    @staticmethod
    def to_geo(x: float, y: float) -> GeoPoint:
        lat = ORIGIN.lat + y / METERS_PER_DEGREE
        lon = ORIGIN.lon + x / (METERS_PER_DEGREE * math.cos(math.radians(ORIGIN.lat)))
        return GeoPoint(lat, lon)

    def render(self, x: float, y: float, shift: float = 0.0, brightness: float = 0.0,
               noise_seed: int | None = None) -> np.ndarray:
        """The tile seen from metric position (x, y)."""
        fw = TILE_W // N_FACADES
        out = np.empty((TILE_H, TILE_W, 3), dtype=np.float32)
        for k in range(N_FACADES):
            theta = math.pi * self.orient[k](x, y)
            base = 60.0 + 140.0 * self.bright[k](x, y)
            hue = self.hue[k](x, y)
            w = 2 * math.pi / self.period[k]
            # sin(a*u + b*v) expanded into outer products
            ax = w * math.cos(theta) * (self._cols + shift)
            by = w * math.sin(theta) * self._rows
            g = np.sin(by)[:, None] * np.cos(ax)[None, :]
            g += np.cos(by)[:, None] * np.sin(ax)[None, :]
            g *= 45.0
            g += base + brightness
            for ch, t in enumerate((1.0 + 0.3 * (hue - 0.5), 1.0, 1.0 - 0.3 * (hue - 0.5))):
                out[:, k * fw:(k + 1) * fw, ch] = g * t
        if noise_seed is not None:
            patch = np.random.Generator(np.random.PCG64(noise_seed)).standard_normal((120, 160, 3), dtype=np.float32)
            out += np.tile(4.0 * patch, (TILE_H // 120, TILE_W // 160, 1))
        np.rint(out, out=out)
        np.clip(out, 0, 255, out=out)
        return out.astype(np.uint8)

    def gallery(self) -> list[GeoImage]:
        return [GeoImage(i, self.to_geo(*xy), lambda xy=xy: self.render(*xy))
                for i, xy in enumerate(self.gallery_xy)]

    def _queries(self, idx) -> list[GeoImage]:
        out = []
        for n in idx:
            x, y = self.query_xy[n]
            b, s, _ = self.query_style[n]

            def src(x=x, y=y, b=b, s=s, n=n):
                return self.render(x, y, shift=12.0 * s, brightness=12.0 * b, noise_seed=self.config.seed * 100003 + n)

            out.append(GeoImage(100000 + int(n), self.to_geo(x, y), src))
        return out

    def train_queries(self) -> list[GeoImage]:
        return self._queries(range(self.config.n_train_queries))

    def test_queries(self) -> list[GeoImage]:
        n = self.config.n_train_queries
        return self._queries(range(n, n + self.config.n_test_queries))


def make_layout(rng: np.random.Generator, layout_id: str = "", shape=(TILE_H, TILE_W)) -> LayoutRecord:
    """An indoor room: wall, floor, furniture blocks and 1-3 rectangular windows."""
    h, w = shape
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = rng.uniform(70, 230, 3)
    floor = int(h * rng.uniform(0.7, 0.85))
    img[floor:] = rng.uniform(30, 150, 3)
    # wallpaper stripes, axis aligned
    if rng.uniform() < 0.5:
        period = rng.uniform(20, 60)
        img[:floor] += (15.0 * np.sign(np.sin(2 * math.pi * np.arange(w) / period)))[None, :, None]
    mask = np.zeros((h, w), dtype=np.uint8)
    for _ in range(rng.integers(1, 4)):
        wh = int(h * rng.uniform(0.4, 0.75))
        ww = int(w * rng.uniform(0.3, 0.6))
        y0 = int(rng.uniform(0.05 * h, max(0.05 * h + 1, floor - wh)))
        x0 = int(rng.uniform(0, w - ww))
        mask[y0:y0 + wh, x0:x0 + ww] = 1
    for _ in range(rng.integers(1, 5)):
        fh_, fw_ = int(h * rng.uniform(0.1, 0.35)), int(w * rng.uniform(0.1, 0.3))
        y0 = int(rng.uniform(floor - fh_, h - fh_)) if floor - fh_ < h - fh_ else floor - fh_
        x0 = int(rng.uniform(0, w - fw_))
        region = (slice(max(0, y0), y0 + fh_), slice(x0, x0 + fw_))
        img[region] = rng.uniform(20, 200, 3)
        mask[region] = 0
    img += np.tile(3.0 * rng.standard_normal((h // 4, w // 4, 3), dtype=np.float32), (4, 4, 1))
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return LayoutRecord.from_arrays(img, mask, LayoutKind.REAL, layout_id)


def make_layouts(n: int, seed: int, name: str = "layouts", kind: LayoutKind = LayoutKind.REAL) -> list[LayoutRecord]:
    rng = stage_rng(seed, f"city/{name}")
    out = [make_layout(rng, f"{name}-{i:04d}") for i in range(n)]
    if LayoutKind(kind) is LayoutKind.GRAY:
        out = [make_gray_layout(x) for x in out]
    return out
