"""Training-triplet mining under geographic constraints.

For a query at location ``x``: the positive is the gallery item within 10 m
that is closest in embedding space; negatives are the N embedding-closest items
of a random pool drawn from everything at least 25 m away.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .augment import LayoutRecord, composite, pair_layouts
from .embed import EmbedderParams, embed_features, extract_features
from .geo import GeoPoint, SpatialIndex
from .manifest import GeoImage

log = logging.getLogger(__name__)


class NoPositive(Exception):
    """No gallery item lies within the positive radius of the query."""


class InsufficientNegatives(Exception):
    pass


@dataclass
class MiningConfig:
    positive_radius: float = 10.0
    negative_radius: float = 25.0
    pool_size: int = 1000
    n_negatives: int = 10


@dataclass
class Triplet:
    query_id: int
    positive_id: int
    negative_ids: list[int]
    layout_id: str | None = None
    pool_ids: list[int] | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "layout_id": self.layout_id,
                "positive_id": self.positive_id, "negative_ids": list(self.negative_ids)}


class Gallery:
    """Gallery ids, locations and current embeddings, plus a spatial index over them."""

    def __init__(self, ids: Sequence[int], locations: Sequence[GeoPoint], embeddings: np.ndarray | None = None):
        self.ids = np.asarray(ids, dtype=np.int64)
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("duplicate gallery ids")
        self.locations = list(locations)
        self.index = SpatialIndex(list(enumerate(self.locations)))
        self.embeddings = None if embeddings is None else np.ascontiguousarray(embeddings, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.ids)

    def set_embeddings(self, embeddings: np.ndarray) -> None:
        if embeddings.shape[0] != len(self.ids):
            raise ValueError("one embedding per gallery item required")
        self.embeddings = np.ascontiguousarray(embeddings, dtype=np.float64)


def _rank(gallery: Gallery, q_emb: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """``positions`` sorted by (squared embedding distance, id)."""
    d2 = kernels.sqdist_block(gallery.embeddings[positions], np.atleast_2d(q_emb))[0]
    return positions[np.lexsort((gallery.ids[positions], d2))]


def mine_positive(q_emb: np.ndarray, q_loc: GeoPoint, gallery: Gallery, radius: float = 10.0) -> int:
    near = gallery.index.query_positions(q_loc, radius)
    if near.size == 0:
        raise NoPositive(f"no gallery item within {radius} m of {q_loc}")
    return int(gallery.ids[_rank(gallery, q_emb, near)[0]])


def mine_negatives(q_emb: np.ndarray, q_loc: GeoPoint, gallery: Gallery, rng: np.random.Generator,
                   pool_size: int = 1000, n: int = 10, min_distance: float = 25.0,
                   return_pool: bool = False):
    """The ``n`` hardest negatives (ascending distance) from a random pool.

    Eligible items are at least ``min_distance`` meters away. The pool is a
    uniform sample without replacement, or every eligible item when fewer than
    ``pool_size`` exist.
    """
    near = gallery.index.query_positions(q_loc, min_distance, inclusive=False)
    eligible = np.setdiff1d(np.arange(len(gallery)), near, assume_unique=True)
    if eligible.size < n:
        raise InsufficientNegatives(f"{eligible.size} eligible negatives, {n} required")
    pool = eligible if eligible.size <= pool_size else rng.choice(eligible, size=pool_size, replace=False)
    hardest = [int(i) for i in gallery.ids[_rank(gallery, q_emb, pool)[:n]]]
    if return_pool:
        return hardest, [int(i) for i in gallery.ids[pool]]
    return hardest


@dataclass
class EpochTriplets:
    triplets: list[Triplet]
    query_features: dict[int, np.ndarray]
    skipped: int = 0


def augmented_query_features(queries: Sequence[GeoImage], layouts: Sequence[LayoutRecord] | None,
                             rng: np.random.Generator) -> tuple[np.ndarray, list[str | None]]:
    """Features of each query after compositing with a randomly paired layout.

    With no layouts the raw query is used and no random numbers are drawn.
    """
    if layouts:
        picks = pair_layouts(len(queries), len(layouts), rng)
    else:
        picks = [None] * len(queries)
    feats, used = [], []
    for q, k in zip(queries, picks):
        img = q.image()
        if k is None:
            used.append(None)
        else:
            lay = layouts[int(k)]
            img = composite(img, lay.mask, lay.image)
            used.append(lay.layout_id)
        feats.append(extract_features(img))
    return np.array(feats).reshape(len(queries), -1), used


def build_epoch_triplets(queries: Sequence[GeoImage], layouts: Sequence[LayoutRecord] | None,
                         gallery: Gallery, params: EmbedderParams, config: MiningConfig,
                         rng: np.random.Generator) -> EpochTriplets:
    """Composite, embed and mine one epoch's triplets.

    ``gallery.embeddings`` must be current for ``params``. Queries without a
    positive are skipped and counted.
    """
    if not queries:
        return EpochTriplets([], {}, 0)
    feats, layout_ids = augmented_query_features(queries, layouts, rng)
    q_embs = embed_features(params, feats)
    out, qfeats, skipped = [], {}, 0
    for q, f, e, lid in zip(queries, feats, q_embs, layout_ids):
        try:
            pos = mine_positive(e, q.location, gallery, config.positive_radius)
        except NoPositive:
            skipped += 1
            log.info("query %s skipped: no positive within %.1f m", q.id, config.positive_radius)
            continue
        negs, pool = mine_negatives(e, q.location, gallery, rng, config.pool_size,
                                    config.n_negatives, config.negative_radius, return_pool=True)
        out.append(Triplet(int(q.id), pos, negs, lid, pool))
        qfeats[int(q.id)] = f
    return EpochTriplets(out, qfeats, skipped)


def write_triplets(path, triplets: Sequence[Triplet]) -> None:
    with open(path, "w") as fh:
        for t in triplets:
            fh.write(json.dumps(t.to_dict()) + "\n")


def read_triplets(path) -> list[Triplet]:
    with open(path) as fh:
        return [Triplet(**json.loads(line)) for line in fh if line.strip()]
