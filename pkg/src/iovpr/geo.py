"""Geodesic distance, radius queries over geo-tagged items, DBSCAN subsampling.

Distances use a sphere of radius 6,371,000 m. Radius queries are inclusive
(``d <= r``); DBSCAN neighbourhoods are strict (``d < eps``).
"""
from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels

EARTH_RADIUS_M = 6371000.0
METERS_PER_DEGREE = EARTH_RADIUS_M * math.pi / 180.0
NOISE = -1


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"invalid WGS84 coordinate ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class ClusterLabel:
    item_id: Hashable
    label: int


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    s1 = math.sin((phi2 - phi1) / 2.0)
    s2 = math.sin(math.radians(b.lon - a.lon) / 2.0)
    h = s1 * s1 + math.cos(phi1) * math.cos(phi2) * s2 * s2
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, max(0.0, h))))


class SpatialIndex:
    """Uniform lat/lon grid over geo-tagged items.

    Cells are square in degrees (``cell_size`` meters of latitude). A query
    collects every cell intersecting the bounding box of the spherical cap and
    filters candidates by exact haversine distance, so results equal a linear
    scan. The index is immutable after construction.
    """

    def __init__(self, items: Mapping[Hashable, GeoPoint] | Iterable[tuple[Hashable, GeoPoint]],
                 cell_size: float = 50.0):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        pairs = list(items.items()) if isinstance(items, Mapping) else list(items)
        self.cell_size = float(cell_size)
        self._cell_deg = self.cell_size / METERS_PER_DEGREE
        self._n_lon = max(1, math.ceil(360.0 / self._cell_deg))
        self.ids: list = [i for i, _ in pairs]
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in spatial index")
        self.lats = np.array([p.lat for _, p in pairs], dtype=np.float64)
        self.lons = np.array([p.lon for _, p in pairs], dtype=np.float64)
        cells: dict[tuple[int, int], list[int]] = defaultdict(list)
        for pos in range(len(self.ids)):
            cells[self._cell_of(self.lats[pos], self.lons[pos])].append(pos)
        self.cells = {k: np.array(v, dtype=np.int64) for k, v in cells.items()}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def items(self) -> dict:
        return {i: GeoPoint(float(la), float(lo)) for i, la, lo in zip(self.ids, self.lats, self.lons)}

    def _cell_of(self, lat: float, lon: float) -> tuple[int, int]:
        row = int(math.floor((lat + 90.0) / self._cell_deg))
        col = int(math.floor((lon + 180.0) / self._cell_deg)) % self._n_lon
        return row, col

    def _candidates(self, center: GeoPoint, r: float) -> np.ndarray:
        delta = r / EARTH_RADIUS_M
        # one extra cell absorbs floating-point slack at the box edges
        dlat = math.degrees(delta) + self._cell_deg
        phi = math.radians(abs(center.lat))
        if delta >= math.pi / 2 - phi or math.degrees(phi) + dlat >= 90.0:
            dlon = 360.0
        else:
            dlon = math.degrees(math.asin(min(1.0, math.sin(delta) / math.cos(phi)))) + self._cell_deg
        row_lo = int(math.floor((center.lat - dlat + 90.0) / self._cell_deg))
        row_hi = int(math.floor((center.lat + dlat + 90.0) / self._cell_deg))
        if dlon >= 180.0:
            cols = None
        else:
            col_lo = int(math.floor((center.lon - dlon + 180.0) / self._cell_deg))
            col_hi = int(math.floor((center.lon + dlon + 180.0) / self._cell_deg))
            cols = None if col_hi - col_lo + 1 >= self._n_lon else range(col_lo, col_hi + 1)
        n_box = (row_hi - row_lo + 1) * (len(cols) if cols is not None else self._n_lon)
        if cols is None or n_box > len(self.cells):
            keep = [v for (row, _), v in self.cells.items() if row_lo <= row <= row_hi]
        else:
            keep = []
            for row in range(row_lo, row_hi + 1):
                for col in cols:
                    hit = self.cells.get((row, col % self._n_lon))
                    if hit is not None:
                        keep.append(hit)
        if not keep:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(keep))

    def query_positions(self, center: GeoPoint, r: float, inclusive: bool = True) -> np.ndarray:
        """Sorted item positions within ``r`` meters of ``center``."""
        if r < 0:
            raise ValueError("radius must be non-negative")
        if not self.ids:
            return np.empty(0, dtype=np.int64)
        cand = self._candidates(center, r)
        if cand.size == 0:
            return cand
        d = kernels.haversine_many(center.lat, center.lon, self.lats[cand], self.lons[cand])
        return cand[d <= r] if inclusive else cand[d < r]

    def distances(self, center: GeoPoint) -> np.ndarray:
        """Distance from ``center`` to every item, in insertion order."""
        return kernels.haversine_many(center.lat, center.lon, self.lats, self.lons)


def radius_query(index: SpatialIndex, center: GeoPoint, r: float) -> set:
    """Ids whose haversine distance to ``center`` is at most ``r`` meters."""
    return {index.ids[p] for p in index.query_positions(center, r)}


def dbscan(points: Sequence[GeoPoint], eps: float = 5.0, min_pts: int = 1,
           ids: Sequence[Hashable] | None = None) -> list[ClusterLabel]:
    """DBSCAN with haversine metric and strict ``< eps`` neighbourhoods.

    A point's neighbourhood includes the point itself, so with ``min_pts=1``
    every point is a core point and nothing is labelled NOISE. Cluster ids are
    assigned in order of discovery while scanning ``points`` in input order.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    if ids is None:
        ids = list(range(len(points)))
    if len(ids) != len(points):
        raise ValueError("ids and points differ in length")
    index = SpatialIndex(list(zip(range(len(points)), points)), cell_size=max(eps, 1.0))
    labels = [None] * len(points)

    def neighbours(i: int) -> np.ndarray:
        return index.query_positions(points[i], eps, inclusive=False)

    cluster = 0
    for i in range(len(points)):
        if labels[i] is not None:
            continue
        nb = neighbours(i)
        if len(nb) < min_pts:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        queue = deque(int(j) for j in nb if j != i)
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = cluster  # border point
            if labels[j] is not None:
                continue
            labels[j] = cluster
            nbj = neighbours(j)
            if len(nbj) >= min_pts:
                queue.extend(int(k) for k in nbj if labels[k] is None or labels[k] == NOISE)
        cluster += 1
    return [ClusterLabel(item_id, lab) for item_id, lab in zip(ids, labels)]


def select_representatives(labels: Iterable[ClusterLabel]) -> set:
    """One id per cluster: the smallest id. NOISE items are not represented."""
    best: dict[int, Hashable] = {}
    for cl in labels:
        if cl.label == NOISE:
            continue
        cur = best.get(cl.label)
        if cur is None or cl.item_id < cur:
            best[cl.label] = cl.item_id
    return set(best.values())
