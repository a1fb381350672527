"""Reference embedder: handcrafted image features followed by a trainable linear map.

``embed(x) = normalize(W.T @ features(x))`` and the learned distance between two
images is the Euclidean distance of their unit embeddings.
"""
from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

THUMB = 64
GRID = 16
HIST_BLOCKS = 4
N_BINS = 8
FEATURE_DIM = GRID * GRID + HIST_BLOCKS * HIST_BLOCKS * N_BINS  # 384
EMBED_DIM = 64

PARAMS_MAGIC = b"IOVP"
PARAMS_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")

_LUMA = np.array([0.299, 0.587, 0.114])
_zero_fallbacks = 0


@dataclass
class EmbedderParams:
    W: np.ndarray  # (feature_dim, embed_dim)
    seed: int = 0

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValueError("W must be a matrix")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("W has non-finite entries")

    @property
    def feature_dim(self) -> int:
        return self.W.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(self.W.copy(), self.seed)

    def checksum(self) -> str:
        return hashlib.sha256(self.W.astype("<f8").tobytes()).hexdigest()[:16]


def init_params(seed: int, feature_dim: int = FEATURE_DIM, embed_dim: int = EMBED_DIM) -> EmbedderParams:
    """Entries i.i.d. uniform in [-1/sqrt(F), 1/sqrt(F)] from PCG64(seed)."""
    if feature_dim < 1 or embed_dim < 1:
        raise ValueError("dimensions must be >= 1")
    bound = 1.0 / math.sqrt(feature_dim)
    rng = np.random.Generator(np.random.PCG64(seed))
    return EmbedderParams(rng.uniform(-bound, bound, size=(feature_dim, embed_dim)), seed)


def _resize_bilinear(gray: np.ndarray, size: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize with edge clamping (no antialiasing)."""
    h, w = gray.shape

    def axis(n_in):
        src = (np.arange(size) + 0.5) * (n_in / size) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    r0, r1, fr = axis(h)
    c0, c1, fc = axis(w)
    fr = fr[:, None]
    top = gray[r0][:, c0] * (1 - fc) + gray[r0][:, c1] * fc
    bot = gray[r1][:, c0] * (1 - fc) + gray[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def _sobel(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.pad(g, 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return gx, gy


def orientation_bins(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Hard assignment to 8 bins centred on multiples of 45 degrees (bin 0 = +x)."""
    ang = np.arctan2(gy, gx)
    return np.round(ang / (math.pi / 4)).astype(np.int64) % N_BINS


def extract_features(img: np.ndarray) -> np.ndarray:
    """384-d vector: 16x16 mean intensities, then a 4x4 grid of 8-bin gradient histograms.

    The image is converted to luma in [0, 1] and resized to 64x64 first.
    """
    img = np.asarray(img)
    if img.size == 0 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("empty image")
    if img.ndim == 3:
        gray = (img[..., :3].astype(np.float64) @ _LUMA) / 255.0
    else:
        gray = img.astype(np.float64) / 255.0
    g = _resize_bilinear(gray, THUMB)
    cell = THUMB // GRID
    intens = g.reshape(GRID, cell, GRID, cell).mean(axis=(1, 3)).ravel()

    gx, gy = _sobel(g)
    mag = np.hypot(gx, gy)
    bins = orientation_bins(gx, gy)
    blk = THUMB // HIST_BLOCKS
    block_id = (np.arange(THUMB)[:, None] // blk) * HIST_BLOCKS + (np.arange(THUMB)[None, :] // blk)
    hist = np.bincount((block_id * N_BINS + bins).ravel(), weights=mag.ravel(),
                       minlength=HIST_BLOCKS * HIST_BLOCKS * N_BINS).reshape(-1, N_BINS)
    tot = hist.sum(axis=1, keepdims=True)
    hist = np.divide(hist, tot, out=np.zeros_like(hist), where=tot > 1e-12)
    return np.concatenate([intens, hist.ravel()])


def normalize_rows(U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize each row; zero rows become e1. Returns (E, zero_mask)."""
    global _zero_fallbacks
    U = np.atleast_2d(U)
    norms = np.sqrt(np.einsum("ij,ij->i", U, U))
    zero = norms == 0.0
    E = U / np.where(zero, 1.0, norms)[:, None]
    if zero.any():
        E[zero] = 0.0
        E[zero, 0] = 1.0
        _zero_fallbacks += int(zero.sum())
        log.warning("%d zero embedding(s) replaced by the first basis vector", int(zero.sum()))
    return E, zero


def zero_fallback_count() -> int:
    return _zero_fallbacks


def embed_features(params: EmbedderParams, feats: np.ndarray) -> np.ndarray:
    """Embed a (n, F) feature matrix (or one F-vector) into unit rows."""
    feats = np.asarray(feats, dtype=np.float64)
    single = feats.ndim == 1
    E, _ = normalize_rows(np.atleast_2d(feats) @ params.W)
    return E[0] if single else E


def embed(params: EmbedderParams, img: np.ndarray) -> np.ndarray:
    return embed_features(params, extract_features(img))


def distance(e1: np.ndarray, e2: np.ndarray) -> float:
    d = np.asarray(e1) - np.asarray(e2)
    return float(np.sqrt(d @ d))


def save_params(path, params: EmbedderParams) -> None:
    F, D = params.W.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(PARAMS_MAGIC, PARAMS_VERSION, F, D, params.seed))
        fh.write(params.W.astype("<f8").tobytes())


def load_params(path) -> EmbedderParams:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError("truncated params file")
        magic, version, F, D, seed = _HEADER.unpack(head)
        if magic != PARAMS_MAGIC:
            raise ValueError(f"bad params magic {magic!r}")
        if version != PARAMS_VERSION:
            raise ValueError(f"unsupported params version {version}")
        body = fh.read()
    if len(body) != F * D * 8:
        raise ValueError("params payload size does not match header")
    return EmbedderParams(np.frombuffer(body, dtype="<f8").reshape(F, D).astype(np.float64), seed)
