"""Recall@K within a geodesic radius, distractor subsets, and report files."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .geo import GeoPoint, SpatialIndex
from .retrieval import Ranking

log = logging.getLogger(__name__)

SMALL_K = (1, 5, 10, 15, 20, 25)
LARGE_K = SMALL_K + (50, 75, 100)


@dataclass
class EvalConfig:
    radius: float = 25.0
    k_values: tuple[int, ...] = SMALL_K

    def __post_init__(self):
        self.k_values = tuple(int(k) for k in self.k_values)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not self.k_values or list(self.k_values) != sorted(set(self.k_values)) or self.k_values[0] < 1:
            raise ValueError("k_values must be positive, unique and ascending")


@dataclass
class RecallReport:
    model: str
    gallery_size: int
    recalls: dict[int, float]
    n_queries: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recalls"] = {str(k): v for k, v in self.recalls.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RecallReport":
        return cls(d["model"], int(d["gallery_size"]), {int(k): float(v) for k, v in d["recalls"].items()},
                   int(d["n_queries"]), dict(d.get("config", {})))


def first_hits(rankings: Sequence[Ranking], query_locs: Mapping[int, GeoPoint],
               gallery_locs: Mapping[int, GeoPoint], radius: float) -> np.ndarray:
    """0-based rank of the first retrieved item within ``radius`` (len(ranking) if none)."""
    out = np.empty(len(rankings), dtype=np.int64)
    for n, r in enumerate(rankings):
        q = query_locs[r.query_id]
        lats = np.array([gallery_locs[i].lat for i in r.ids], dtype=np.float64)
        lons = np.array([gallery_locs[i].lon for i in r.ids], dtype=np.float64)
        ok = np.flatnonzero(kernels.haversine_many(q.lat, q.lon, lats, lons) <= radius)
        out[n] = ok[0] if ok.size else len(r.ids)
    return out


def recall_at_k(rankings: Sequence[Ranking], query_locs: Mapping[int, GeoPoint],
                gallery_locs: Mapping[int, GeoPoint], config: EvalConfig | None = None,
                model: str = "", gallery_size: int | None = None) -> RecallReport:
    """Percentage of queries with a correct item in the top K, one decimal."""
    config = config or EvalConfig()
    if not rankings:
        raise ValueError("no queries to evaluate")
    if gallery_size is None:
        gallery_size = len(gallery_locs)
    hits = first_hits(rankings, query_locs, gallery_locs, config.radius)
    recalls = {}
    for k in config.k_values:
        if k > gallery_size:
            log.warning("K=%d exceeds gallery size %d; capping", k, gallery_size)
        kk = min(k, gallery_size)
        short = [r.query_id for r in rankings if len(r.ids) < kk]
        if short:
            raise ValueError(f"ranking for query {short[0]} shorter than K={kk}")
        recalls[k] = round(100.0 * int(np.count_nonzero(hits < kk)) / len(rankings), 1)
    return RecallReport(model, int(gallery_size), recalls, len(rankings),
                        {"radius": config.radius, "k_values": list(config.k_values)})


def make_distractor_subset(gallery_ids: Sequence[int], gallery_locs: Sequence[GeoPoint],
                           query_locs: Sequence[GeoPoint], target_size: int, radius: float,
                           rng: np.random.Generator) -> set[int]:
    """Every gallery item within ``radius`` of some query, padded with random distractors.

    Distractors are a prefix of one seeded permutation of the remaining ids, so
    subsets built with the same seed are nested by size.
    """
    ids = np.asarray(gallery_ids, dtype=np.int64)
    if target_size > ids.size:
        raise ValueError("target_size exceeds gallery size")
    index = SpatialIndex(list(enumerate(gallery_locs)))
    pos = set()
    for q in query_locs:
        pos.update(int(p) for p in index.query_positions(q, radius))
    if len(pos) > target_size:
        raise ValueError(f"{len(pos)} true positives exceed target size {target_size}")
    rest = np.sort(ids[np.setdiff1d(np.arange(ids.size), np.fromiter(pos, dtype=np.int64, count=len(pos)))])
    perm = rest[rng.permutation(rest.size)]
    return {int(i) for i in ids[list(pos)]} | {int(i) for i in perm[: target_size - len(pos)]}


def write_id_list(path, ids) -> None:
    with open(path, "w") as fh:
        for i in sorted(ids):
            fh.write(f"{i}\n")


def read_id_list(path) -> list:
    with open(path) as fh:
        out = []
        for line in fh:
            line = line.strip()
            if line:
                out.append(int(line) if line.lstrip("-").isdigit() else line)
        return out


# --- report files ------------------------------------------------------------

def _columns(reports: Sequence[RecallReport]) -> list[int]:
    ks = sorted({k for r in reports for k in r.recalls})
    return ks


def reports_to_csv(reports: Sequence[RecallReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    ks = _columns(reports)
    w.writerow(["model", "size"] + [f"R@{k}" for k in ks])
    for r in reports:
        w.writerow([r.model, r.gallery_size] + [f"{r.recalls[k]:.1f}" if k in r.recalls else "" for k in ks])
    return buf.getvalue()


def reports_from_csv(text: str) -> list[RecallReport]:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    ks = [int(h[2:]) for h in header[2:]]
    out = []
    for row in body:
        rec = {k: float(v) for k, v in zip(ks, row[2:]) if v != ""}
        out.append(RecallReport(row[0], int(row[1]), rec, 0))
    return out


def reports_to_json(reports: Sequence[RecallReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"


def reports_from_json(text: str) -> list[RecallReport]:
    return [RecallReport.from_dict(d) for d in json.loads(text)]


def emit_report(report: RecallReport | Sequence[RecallReport], path, fmt: str | None = None) -> None:
    """Write one or more reports as CSV or JSON (chosen from the suffix by default)."""
    reports = [report] if isinstance(report, RecallReport) else list(report)
    fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
    text = reports_to_json(reports) if fmt == "json" else reports_to_csv(reports)
    with open(path, "w", newline="") as fh:
        fh.write(text)
