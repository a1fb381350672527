"""Exact top-K search over gallery embeddings, an IVF-style pruned path, reranking.

Rankings order by (distance, gallery id). The index stores items sorted by id,
so position order and id order coincide and ties resolve by position.
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .rng import stage_rng

STORE_MAGIC = b"IOVG"
STORE_VERSION = 1
_STORE_HEADER = struct.Struct("<4sIQI")
RERANK_WINDOW = 100


class SearchMode(str, enum.Enum):
    EXACT = "exact"
    PRUNED = "pruned"


@dataclass
class Ranking:
    query_id: int
    ids: list[int]
    distances: list[float]

    def __len__(self) -> int:
        return len(self.ids)

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "ids": self.ids, "distances": self.distances}


def select_k(d2: np.ndarray, pos: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The ``k`` smallest (d2, pos) pairs in lexicographic order."""
    if d2.size > k:
        kth = np.partition(d2, k - 1)[k - 1]
        keep = d2 <= kth
        d2, pos = d2[keep], pos[keep]
    order = np.lexsort((pos, d2))[:k]
    return d2[order], pos[order]


def kmeans(X: np.ndarray, n_clusters: int, rng: np.random.Generator, iters: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm from a random sample of points. Returns (centroids, assignment).

    The returned assignment is recomputed against the final centroids, so each
    point is assigned to its nearest centroid (lowest index on ties). Empty
    clusters keep their previous centroid.
    """
    n = X.shape[0]
    k = min(n_clusters, n)
    centroids = X[np.sort(rng.choice(n, size=k, replace=False))].copy()
    for _ in range(iters):
        assign = np.argmin(kernels.sqdist_block(centroids, X), axis=1)
        for c in range(k):
            members = X[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    assign = np.argmin(kernels.sqdist_block(centroids, X), axis=1)
    return centroids, assign


class GalleryIndex:
    """Flat embedding matrix with an optional coarse partitioning.

    Building the partitions never changes exact results: :meth:`search` in
    EXACT mode always scans every item.
    """

    def __init__(self, ids: Sequence[int], embeddings: np.ndarray, mode: SearchMode = SearchMode.EXACT,
                 n_partitions: int = 16, n_probe: int = 4, seed: int = 0, block_size: int = 65536):
        ids = np.asarray(ids, dtype=np.int64)
        emb = np.asarray(embeddings, dtype=np.float64)
        if ids.size == 0:
            raise ValueError("empty gallery")
        if emb.ndim != 2 or emb.shape[0] != ids.size:
            raise ValueError("embeddings must be (n_items, dim)")
        if np.unique(ids).size != ids.size:
            raise ValueError("duplicate gallery ids")
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.embeddings = np.ascontiguousarray(emb[order])
        self.mode = SearchMode(mode)
        self.block_size = block_size
        self.n_probe = n_probe
        self.centroids = None
        self.assignment = None
        self.members: list[np.ndarray] = []
        if self.mode is SearchMode.PRUNED:
            self.centroids, self.assignment = kmeans(self.embeddings, n_partitions, stage_rng(seed, "index/kmeans"))
            self.members = [np.flatnonzero(self.assignment == c) for c in range(len(self.centroids))]

    def __len__(self) -> int:
        return self.ids.size

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def _exact(self, Q: np.ndarray, k: int) -> list[tuple[np.ndarray, np.ndarray]]:
        best = [(np.empty(0), np.empty(0, dtype=np.int64)) for _ in range(len(Q))]
        for start in range(0, len(self), self.block_size):
            block = self.embeddings[start:start + self.block_size]
            D2 = kernels.sqdist_block(block, Q)
            pos = np.arange(start, start + block.shape[0])
            for i in range(len(Q)):
                d_old, p_old = best[i]
                best[i] = select_k(np.concatenate([d_old, D2[i]]), np.concatenate([p_old, pos]), k)
        return best

    def _pruned(self, q: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        cd = kernels.sqdist_block(self.centroids, q[None])[0]
        probe = np.lexsort((np.arange(cd.size), cd))[: self.n_probe]
        cand = np.sort(np.concatenate([self.members[c] for c in probe]))
        d2 = kernels.sqdist_block(self.embeddings[cand], q[None])[0]
        return select_k(d2, cand, k)

    def search(self, queries: np.ndarray, k: int, query_ids: Sequence[int] | None = None,
               mode: SearchMode | None = None) -> list[Ranking]:
        """Top-``k`` rankings for a (n_queries, dim) matrix; ``k`` is capped at the gallery size."""
        if k < 1:
            raise ValueError("k must be >= 1")
        Q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
        if Q.shape[1] != self.dim:
            raise ValueError("query dimension mismatch")
        k = min(k, len(self))
        mode = self.mode if mode is None else SearchMode(mode)
        if query_ids is None:
            query_ids = range(len(Q))
        if mode is SearchMode.PRUNED:
            if self.centroids is None:
                raise ValueError("index was built without partitions")
            hits = [self._pruned(q, k) for q in Q]
        else:
            hits = []
            for s in range(0, len(Q), 256):
                hits.extend(self._exact(Q[s:s + 256], k))
        return [Ranking(int(qid), [int(i) for i in self.ids[p]], [float(x) for x in np.sqrt(d)])
                for qid, (d, p) in zip(query_ids, hits)]


def build_index(items: Sequence[tuple[int, np.ndarray]], mode: SearchMode = SearchMode.EXACT,
                n_partitions: int = 16, **kw) -> GalleryIndex:
    if not items:
        raise ValueError("empty gallery")
    ids = [i for i, _ in items]
    return GalleryIndex(ids, np.array([e for _, e in items]), mode, n_partitions, **kw)


def query_topk(index: GalleryIndex, q: np.ndarray, k: int, query_id: int = 0) -> Ranking:
    return index.search(np.asarray(q)[None], k, [query_id])[0]


def pruned_recall(index: GalleryIndex, queries: np.ndarray, k: int = 100) -> float:
    """Mean fraction of the exact top-``k`` ids that the pruned search also returns."""
    exact = index.search(queries, k, mode=SearchMode.EXACT)
    pruned = index.search(queries, k, mode=SearchMode.PRUNED)
    hits = [len(set(e.ids) & set(p.ids)) / len(e.ids) for e, p in zip(exact, pruned)]
    return float(np.mean(hits))


Reranker = Callable[[object, list[int]], Sequence[tuple[int, float]]]


def rerank(q_image, ranking: Ranking, reranker: Reranker | None = None, window: int = RERANK_WINDOW) -> Ranking:
    """Reorder the first ``window`` entries by reranker score (higher first).

    The reranker receives the query image and the prefix ids and returns
    ``(id, score)`` pairs covering exactly those ids. Equal scores keep the
    original order. Entries past the prefix are untouched.
    """
    if reranker is None:
        return ranking
    prefix = ranking.ids[:window]
    scored = list(reranker(q_image, list(prefix)))
    if sorted(i for i, _ in scored) != sorted(prefix):
        raise ValueError("reranker must return a permutation of the ranking prefix")
    score = dict(scored)
    rank = {gid: r for r, gid in enumerate(prefix)}
    new_prefix = sorted(prefix, key=lambda gid: (-score[gid], rank[gid]))
    dist = dict(zip(ranking.ids, ranking.distances))
    ids = new_prefix + ranking.ids[window:]
    return Ranking(ranking.query_id, ids, [dist[i] for i in ids])


# --- on-disk formats ------------------------------------------------------------

def write_store(path, ids: Sequence[int], embeddings: np.ndarray) -> None:
    """Embedding store: header {magic, version u32, count u64, dim u32} + {id u64, dim x f64} per item."""
    emb = np.asarray(embeddings, dtype="<f8")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size != emb.shape[0]:
        raise ValueError("ids and embeddings differ in length")
    rec = np.zeros(ids.size, dtype=[("id", "<u8"), ("v", "<f8", (emb.shape[1],))])
    rec["id"] = ids
    rec["v"] = emb
    with open(path, "wb") as fh:
        fh.write(_STORE_HEADER.pack(STORE_MAGIC, STORE_VERSION, ids.size, emb.shape[1]))
        fh.write(rec.tobytes())


def read_store(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.read(_STORE_HEADER.size)
        if len(head) != _STORE_HEADER.size:
            raise ValueError("truncated embedding store")
        magic, version, count, dim = _STORE_HEADER.unpack(head)
        if magic != STORE_MAGIC or version != STORE_VERSION:
            raise ValueError("not an embedding store (bad magic/version)")
        body = fh.read()
    dt = np.dtype([("id", "<u8"), ("v", "<f8", (dim,))])
    if len(body) != count * dt.itemsize:
        raise ValueError("embedding store payload size does not match header")
    rec = np.frombuffer(body, dtype=dt)
    return rec["id"].astype(np.int64), rec["v"].astype(np.float64)


def write_rankings(path, rankings: Sequence[Ranking]) -> None:
    with open(path, "w") as fh:
        for r in rankings:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_rankings(path) -> list[Ranking]:
    with open(path) as fh:
        return [Ranking(**json.loads(line)) for line in fh if line.strip()]
