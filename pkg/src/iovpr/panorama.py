"""Equirectangular panorama -> cube faces -> 360 degree strip -> 24 perspective tiles.

Images are ``numpy.ndarray`` of shape (H, W, 3), dtype uint8, row-major.

Angle conventions: yaw 0 (the front-face axis) sits at panorama column
``(W - 1) / 2`` and increases to the right; pitch 0 sits at row ``(H - 1) / 2``
and increases upwards. Faces use pixel-centre coordinates, so the face centre
lies between the two middle pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .geo import GeoPoint

PANO_SHAPE = (2000, 4000)
FACE_SIZE = 960
STRIP_SHAPE = (720, 3840)
CROP_BOTTOM = 240
TILE_SHAPE = (480, 640)
TILE_ROWS = (0, 240)
TILE_COL_STRIDE = 320
N_YAW = 12

FACES = ("front", "right", "back", "left", "top", "bottom")
LATERAL = FACES[:4]


@dataclass
class PanoramaRecord:
    image: np.ndarray
    location: GeoPoint
    capture_year: int
    pano_id: str

    def __post_init__(self):
        check_image(self.image, PANO_SHAPE, "panorama")


@dataclass
class PerspectiveTile:
    image: np.ndarray
    pano_id: str
    yaw_index: int
    pitch_index: int
    location: GeoPoint | None = None

    @property
    def name(self) -> str:
        return tile_name(self.pano_id, self.pitch_index, self.yaw_index)


def tile_name(pano_id: str, pitch_index: int, yaw_index: int) -> str:
    return f"{pano_id}_p{pitch_index}_y{yaw_index}.png"


def check_image(img: np.ndarray, shape: tuple[int, int], what: str = "image") -> None:
    if not isinstance(img, np.ndarray) or img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{what} must be an HxWx3 uint8 array")
    if img.shape[:2] != tuple(shape):
        raise ValueError(f"{what} must be {shape[0]}x{shape[1]}, got {img.shape[0]}x{img.shape[1]}")


def face_directions(face: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Unit-free ray directions (x right, y up, z forward) for face coordinates.

    ``u`` runs left to right and ``v`` top to bottom, both in [-1, 1].
    """
    one = np.ones_like(u)
    if face in LATERAL:
        yaw = LATERAL.index(face) * math.pi / 2
        fwd = (math.sin(yaw), 0.0, math.cos(yaw))
        right = (math.cos(yaw), 0.0, -math.sin(yaw))
        x = fwd[0] * one + u * right[0]
        y = -v
        z = fwd[2] * one + u * right[2]
    elif face == "top":
        x, y, z = u, one, v
    elif face == "bottom":
        x, y, z = u, -one, -v
    else:
        raise ValueError(f"unknown face {face!r}")
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def directions_to_pano(dirs: np.ndarray, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Fractional (row, col) panorama coordinates of ray directions."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    yaw = np.arctan2(x, z)
    pitch = np.arctan2(y, np.hypot(x, z))
    col = (width - 1) / 2.0 + yaw * (width / (2.0 * math.pi))
    row = (height - 1) / 2.0 - pitch * (height / math.pi)
    return row, col


def face_pixel_coords(size: int) -> tuple[np.ndarray, np.ndarray]:
    c = (2.0 * (np.arange(size) + 0.5) / size) - 1.0
    return np.meshgrid(c, c)  # u varies along columns, v along rows


@lru_cache(maxsize=16)
def _face_lookup(face: str, size: int, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    u, v = face_pixel_coords(size)
    rows, cols = directions_to_pano(face_directions(face, u, v), height, width)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def project_face(img: np.ndarray, face: str, size: int = FACE_SIZE) -> np.ndarray:
    """Gnomonic 90 degree view of one cube face, bilinear with horizontal wrap."""
    rows, cols = _face_lookup(face, size, img.shape[0], img.shape[1])
    return kernels.bilinear_sample_wrap(img, rows, cols)


def project_to_faces(pano: PanoramaRecord | np.ndarray, faces=FACES) -> list[np.ndarray]:
    """Project a 2000x4000 panorama onto 960x960 cube faces (default: all six)."""
    img = pano.image if isinstance(pano, PanoramaRecord) else pano
    check_image(img, PANO_SHAPE, "panorama")
    return [project_face(img, f) for f in faces]


def stitch_and_crop(faces) -> np.ndarray:
    """Concatenate front, right, back, left and drop the bottom 240 rows."""
    faces = list(faces)
    if len(faces) != 4:
        raise ValueError("expected the four lateral faces (front, right, back, left)")
    for f in faces:
        check_image(f, (FACE_SIZE, FACE_SIZE), "face")
    return np.ascontiguousarray(np.concatenate(faces, axis=1)[: FACE_SIZE - CROP_BOTTOM])


def cut_tiles(strip: np.ndarray, pano_id: str = "", location: GeoPoint | None = None) -> list[PerspectiveTile]:
    """24 overlapping 480x640 tiles: 2 pitch rows x 12 yaws, stride 320, wrapping."""
    check_image(strip, STRIP_SHAPE, "strip")
    th, tw = TILE_SHAPE
    # pad with the first tile width so the last column tile wraps around
    wrapped = np.concatenate([strip, strip[:, : tw - TILE_COL_STRIDE]], axis=1)
    tiles = []
    for p, y0 in enumerate(TILE_ROWS):
        for k in range(N_YAW):
            x0 = k * TILE_COL_STRIDE
            img = np.ascontiguousarray(wrapped[y0:y0 + th, x0:x0 + tw])
            tiles.append(PerspectiveTile(img, pano_id, k, p, location))
    return tiles


def process_panorama(pano: PanoramaRecord) -> list[PerspectiveTile]:
    faces = project_to_faces(pano, LATERAL)
    strip = stitch_and_crop(faces)
    return cut_tiles(strip, pano.pano_id, pano.location)
