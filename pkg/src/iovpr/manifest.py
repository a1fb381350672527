"""Dataset manifests (JSON-Lines) and geo-tagged image records."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import imageio
from .geo import GeoPoint


class Role(str, enum.Enum):
    QUERY = "QUERY"
    GALLERY = "GALLERY"


_OPTIONAL = ("pano_id", "yaw_index", "pitch_index")


@dataclass
class ManifestRecord:
    id: int
    image_path: str
    lat: float
    lon: float
    year: int | None = None
    role: Role = Role.GALLERY
    pano_id: str | None = None
    yaw_index: int | None = None
    pitch_index: int | None = None

    def __post_init__(self):
        GeoPoint(self.lat, self.lon)  # validates
        self.role = Role(self.role)

    @property
    def location(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)

    def to_dict(self) -> dict:
        d = {"id": self.id, "image_path": self.image_path, "lat": self.lat, "lon": self.lon,
             "year": self.year, "role": self.role.value}
        for k in _OPTIONAL:
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d


def write_manifest(path, records: Iterable[ManifestRecord]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_manifest(path, check_files: bool = False) -> list[ManifestRecord]:
    records = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord(**json.loads(line)))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{n}: bad manifest row: {exc}") from exc
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate ids")
    if check_files:
        base = Path(path).parent
        for r in records:
            if not (base / r.image_path).exists():
                raise FileNotFoundError(f"{path}: missing image {r.image_path}")
    return records


@dataclass
class GeoImage:
    """A geo-tagged image whose pixels are produced on demand.

    ``source`` is either an array or a zero-argument callable returning one,
    so large galleries never need to sit in memory at once.
    """
    id: int
    location: GeoPoint
    source: np.ndarray | Callable[[], np.ndarray] = field(repr=False)

    def image(self) -> np.ndarray:
        return self.source() if callable(self.source) else self.source


def images_from_manifest(path, role: Role | None = None) -> list[GeoImage]:
    base = Path(path).parent
    out = []
    for r in read_manifest(path):
        if role is not None and r.role is not Role(role):
            continue
        p = base / r.image_path
        out.append(GeoImage(r.id, r.location, lambda p=p: imageio.read_rgb(p)))
    return out
