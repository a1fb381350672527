"""Acceptance criteria 1-8, each with its runtime budget.

Every criterion records one PASS/FAIL line (printed in the pytest summary).
Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
import functools
import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest

from iovpr import panorama as pn
from iovpr.augment import composite, filter_layouts
from iovpr.cli import main as cli_main
from iovpr.embed import embed_features, extract_features, init_params
from iovpr.evaluation import SMALL_K, EvalConfig, make_distractor_subset, recall_at_k
from iovpr.geo import METERS_PER_DEGREE, GeoPoint, haversine
from iovpr.manifest import GeoImage
from iovpr.mining import Gallery, MiningConfig, build_epoch_triplets
from iovpr.parallel import feature_matrix
from iovpr.retrieval import GalleryIndex, Ranking
from iovpr.rng import stage_rng
from iovpr.synthetic import CityConfig, SyntheticCity, make_layouts
from iovpr.training import LossConfig, loss_and_grad, train, triplet_loss

RESULTS: dict[int, str] = {}
BASE = GeoPoint(52.37, 4.89)


def criterion(number: int, title: str, budget_s: float):
    """Time the test, enforce its budget and record a one-line verdict."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            detail = ""
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - t0
                assert elapsed < budget_s, f"runtime {elapsed:.1f}s exceeds {budget_s:.0f}s budget"
            except BaseException as exc:
                elapsed = time.perf_counter() - t0
                RESULTS[number] = f"criterion {number} FAIL  {title} ({elapsed:.1f}s): {exc}".splitlines()[0]
                print(RESULTS[number])
                raise
            RESULTS[number] = f"criterion {number} PASS  {title} ({elapsed:.1f}s / {budget_s:.0f}s) {detail}".rstrip()
            print(RESULTS[number])
        return run
    return wrap


def offset(p, north_m=0.0, east_m=0.0):
    return GeoPoint(p.lat + north_m / METERS_PER_DEGREE,
                    p.lon + east_m / (METERS_PER_DEGREE * math.cos(math.radians(p.lat))))


def unit(rng, n, d=64):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# --- 1 ------------------------------------------------------------------------

@criterion(1, "compositing exactness on 1,000 random triples", 5)
def test_criterion_1_compositing():
    rng = np.random.default_rng(1)
    for i in range(1000):
        h, w = int(rng.integers(1, 64)), int(rng.integers(1, 64))
        q = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        c = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        b = (rng.uniform(size=(h, w)) < rng.uniform()).astype(np.uint8)
        out = composite(q, b, c)
        win = b == 1
        assert np.array_equal(out[win], q[win]) and np.array_equal(out[~win], c[~win]), f"triple {i}"
        assert out.dtype == np.uint8
        assert np.array_equal(composite(q, np.ones_like(b), c), q)
        assert np.array_equal(composite(q, np.zeros_like(b), c), c)
    return "1000/1000 exact"


# --- 2 ------------------------------------------------------------------------

@criterion(2, "panorama -> 24 tiles of 480x640 with exact strip reassembly (20 panoramas)", 30)
def test_criterion_2_panorama():
    rng = np.random.default_rng(2)
    for n in range(20):
        img = rng.integers(0, 256, (2000, 4000, 3), dtype=np.uint8)
        rec = pn.PanoramaRecord(img, offset(BASE, east_m=10 * n), 2020, f"pano{n}")
        strip = pn.stitch_and_crop(pn.project_to_faces(rec, pn.LATERAL))
        assert strip.shape == (720, 3840, 3)
        tiles = pn.cut_tiles(strip, rec.pano_id, rec.location)
        assert len(tiles) == 24
        assert all(t.image.shape == (480, 640, 3) for t in tiles)
        assert {(t.pitch_index, t.yaw_index) for t in tiles} == {(p, y) for p in range(2) for y in range(12)}
        back = np.zeros_like(strip)
        for t in tiles:
            y0 = pn.TILE_ROWS[t.pitch_index]
            cols = (t.yaw_index * pn.TILE_COL_STRIDE + np.arange(640)) % 3840
            back[y0:y0 + 480][:, cols] = t.image
        assert np.array_equal(back, strip), f"panorama {n}"
    return "20/20 panoramas"


# --- 3 ------------------------------------------------------------------------

@criterion(3, "mining audit on a 10,000-item gallery", 60)
def test_criterion_3_mining():
    rng = np.random.default_rng(3)
    side, spacing = 100, 5.0
    locs = [offset(BASE, north_m=spacing * r, east_m=spacing * c) for r in range(side) for c in range(side)]
    ids = rng.permutation(10 * len(locs))[: len(locs)]
    params = init_params(3)
    gallery = Gallery(ids, locs, unit(rng, len(locs)))
    queries = [GeoImage(10**6 + k, offset(BASE, *rng.uniform(0, spacing * (side - 1), 2)),
                        rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)) for k in range(300)]
    cfg = MiningConfig(10.0, 25.0, 1000, 10)
    batch = build_epoch_triplets(queries, None, gallery, params, cfg, stage_rng(3, "acceptance/mining"))
    assert len(batch.triplets) + batch.skipped == len(queries) and batch.triplets
    pos_of = {int(i): p for p, i in enumerate(ids)}
    qloc = {q.id: q.location for q in queries}
    qemb = {}
    for q in queries:
        qemb[q.id] = embed_features(params, extract_features(q.image()))
    for t in batch.triplets:
        q = qloc[t.query_id]
        assert haversine(q, locs[pos_of[t.positive_id]]) <= 10.0
        assert len(t.negative_ids) == 10
        assert all(haversine(q, locs[pos_of[n]]) >= 25.0 for n in t.negative_ids)
        assert len(set(t.pool_ids)) == len(t.pool_ids) == 1000
        e = qemb[t.query_id]
        d2 = [(float(np.sum((gallery.embeddings[pos_of[i]] - e) ** 2)), i) for i in t.pool_ids]
        assert [i for _, i in sorted(d2)[:10]] == t.negative_ids
    return f"{len(batch.triplets)} triplets audited, {batch.skipped} skipped"


# --- 4 ------------------------------------------------------------------------

def _hinges(W, fq, fp, fn, m):
    """Per-negative hinge arguments, computed independently of the package."""
    def e(f):
        u = W.T @ f
        return u / np.linalg.norm(u)
    q, p = e(fq), e(fp)
    return np.array([np.sum((q - p) ** 2) + m - np.sum((q - e(f)) ** 2) for f in fn])


def _reference_loss(W, fq, fp, fn, m):
    return float(np.maximum(_hinges(W, fq, fp, fn, m), 0.0).sum())


@criterion(4, "loss biconditional on 10,000 cases and gradient vs finite differences", 30)
def test_criterion_4_loss_gradient():
    rng = np.random.default_rng(4)
    for case in range(10000):
        m = float(rng.uniform(0.01, 0.5))
        d2p = float(rng.uniform(0, 4))
        d2n = rng.uniform(0, 4, int(rng.integers(1, 11)))
        if case % 2:
            # pin some negatives exactly on the margin to probe the closed boundary
            d2n[rng.uniform(size=d2n.size) < 0.5] = d2p + m
        loss = triplet_loss(d2p, d2n, m)
        assert (loss == 0.0) == bool(np.all(d2p + m <= d2n))
    worst, configs, h, m = 0.0, 0, 1e-5, 0.1
    while configs < 12:
        F, D, N = int(rng.integers(4, 12)), int(rng.integers(2, 6)), int(rng.integers(1, 4))
        W = rng.standard_normal((F, D))
        fq, fp = rng.standard_normal(F), rng.standard_normal(F)
        fn = fq + 0.3 * rng.standard_normal((N, F))
        x = _hinges(W, fq, fp, fn, m)
        if (x <= 0).all() or (np.abs(x) < 1e-3).any():
            continue  # nothing to compare, or too close to a kink for finite differences
        _, g = loss_and_grad(W, fq, fp, fn, m)
        g_fd = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            Wp, Wm = W.copy(), W.copy()
            Wp[idx] += h
            Wm[idx] -= h
            g_fd[idx] = (_reference_loss(Wp, fq, fp, fn, m) - _reference_loss(Wm, fq, fp, fn, m)) / (2 * h)
        rel = np.linalg.norm(g - g_fd) / max(np.linalg.norm(g), np.linalg.norm(g_fd))
        assert rel <= 1e-4, f"relative error {rel:.2e}"
        worst = max(worst, rel)
        configs += 1
    return f"10000 loss cases, {configs} gradient configs, worst rel err {worst:.1e}"


# --- 5 ------------------------------------------------------------------------

@criterion(5, "EXACT top-K equals linear-scan oracle on 10,000 unit vectors", 30)
def test_criterion_5_retrieval():
    rng = np.random.default_rng(5)
    X = unit(rng, 10000)
    X[5000:5050] = X[100]  # planted exact ties
    ids = rng.permutation(10**6)[:10000]
    index = GalleryIndex(ids, X)
    Q = np.vstack([unit(rng, 17), X[[100, 7, 9000]]])
    for k in (1, 10, 100):
        rankings = index.search(Q, k)
        for q, r in zip(Q, rankings):
            d2 = np.zeros(len(X))
            for j in range(X.shape[1]):  # coordinate-sequential sum
                diff = X[:, j] - q[j]
                d2 += diff * diff
            oracle = sorted(zip(d2.tolist(), ids.tolist()))[:k]
            assert r.ids == [i for _, i in oracle]
            assert r.distances == [math.sqrt(d) for d, _ in oracle]
    tie = index.search(X[100][None], 51)[0]
    assert tie.ids == sorted(tie.ids) and set(tie.distances) == {0.0}
    return "K in {1,10,100}, 20 queries, ties included"


# --- 6 ------------------------------------------------------------------------

@criterion(6, "Recall@K semantics: planted ranks, monotone in K and across nested subsets", 60)
def test_criterion_6_recall():
    rng = np.random.default_rng(6)
    qlocs, glocs, rankings, planted = {}, {}, [], {}
    gid = 0
    for q in range(200):
        qlocs[q] = offset(BASE, north_m=1000.0 * q)
        rank = int(rng.integers(0, 31))  # 30 -> no true match in the list
        ids = []
        for r in range(30):
            glocs[gid] = offset(qlocs[q], east_m=3.0 if r == rank else 300.0 + r)
            ids.append(gid)
            gid += 1
        planted[q] = rank
        rankings.append(Ranking(q, ids, [float(i) for i in range(30)]))
    rep = recall_at_k(rankings, qlocs, glocs, EvalConfig(25.0, SMALL_K))
    hand = {k: round(100.0 * sum(r < k for r in planted.values()) / 200, 1) for k in SMALL_K}
    assert rep.recalls == hand
    vals = list(rep.recalls.values())
    assert vals == sorted(vals)

    # nested distractor subsets with fixed embeddings
    n_gal, n_q = 20000, 100
    g_locs = [offset(BASE, *rng.uniform(-4000, 4000, 2)) for _ in range(n_gal)]
    g_emb = unit(rng, n_gal)
    anchors = rng.choice(n_gal, n_q, replace=False)
    q_locs = [offset(g_locs[a], *rng.uniform(-5, 5, 2)) for a in anchors]
    q_emb = g_emb[anchors] + 0.25 * rng.standard_normal((n_q, 64))
    q_emb /= np.linalg.norm(q_emb, axis=1, keepdims=True)
    g_ids = list(range(n_gal))
    by_size = {}
    for size in (1000, 5000, 20000):
        sub = sorted(make_distractor_subset(g_ids, g_locs, q_locs, size, 25.0, stage_rng(6, "acceptance/subset")))
        by_size[size] = set(sub)
        index = GalleryIndex(sub, g_emb[sub])
        ranks = index.search(q_emb, max(SMALL_K), list(range(n_q)))
        r = recall_at_k(ranks, dict(enumerate(q_locs)), {i: g_locs[i] for i in sub}, EvalConfig(25.0, SMALL_K))
        by_size[size] = (by_size[size], r.recalls)
    assert by_size[1000][0] <= by_size[5000][0] <= by_size[20000][0]
    for k in SMALL_K:
        seq = [by_size[s][1][k] for s in (1000, 5000, 20000)]
        assert seq[0] >= seq[1] >= seq[2], f"R@{k} increased with distractors: {seq}"
    r5 = [by_size[s][1][5] for s in (1000, 5000, 20000)]
    return f"R@5 over 1k/5k/20k = {r5}"


# --- 7 ------------------------------------------------------------------------

TRAIN_CONFIG = dict(learning_rate=0.1, batch_size=8, epochs=10, margin=0.1, seed=0)


@criterion(7, "synthetic city: augmented embedder R@5 >= 60% and >= 1.2x raw", 600)
def test_criterion_7_end_to_end():
    seed = TRAIN_CONFIG["seed"]
    city = SyntheticCity(CityConfig(n_gallery=2000, n_train_queries=300, n_test_queries=100, seed=seed))
    gallery = city.gallery()
    train_q = [GeoImage(q.id, q.location, q.image()) for q in city.train_queries()]
    test_q = city.test_queries()
    lay_train = filter_layouts(make_layouts(150, seed, "train"), 0.2)
    lay_test = filter_layouts(make_layouts(60, seed, "test"), 0.2)
    g_feats = feature_matrix(gallery)
    picks = stage_rng(seed, "eval/pair").integers(0, len(lay_test), len(test_q))
    t_feats = np.array([extract_features(composite(q.image(), lay_test[k].mask, lay_test[k].image))
                        for q, k in zip(test_q, picks)])
    qlocs = {q.id: q.location for q in test_q}
    glocs = {g.id: g.location for g in gallery}

    def recall5(params):
        index = GalleryIndex([g.id for g in gallery], embed_features(params, g_feats))
        ranks = index.search(embed_features(params, t_feats), 25, [q.id for q in test_q])
        return recall_at_k(ranks, qlocs, glocs, EvalConfig(25.0)).recalls[5]

    cfg = LossConfig(**TRAIN_CONFIG)
    p_aug, rep_aug = train(train_q, gallery, lay_train, cfg, gallery_features=g_feats)
    p_raw, _ = train(train_q, gallery, None, cfg, gallery_features=g_feats)
    r_aug, r_raw = recall5(p_aug), recall5(p_raw)
    assert rep_aug.epochs[-1].mean_loss < rep_aug.epochs[0].mean_loss
    detail = f"R@5 augmented {r_aug:.1f} vs raw {r_raw:.1f} (ratio {r_aug / max(r_raw, 1e-9):.2f})"
    assert r_aug >= 60.0, detail
    assert r_aug >= 1.2 * r_raw, detail
    return detail


# --- 8 ------------------------------------------------------------------------

def _run_pipeline(root: Path, threads: str, monkeypatch) -> dict:
    monkeypatch.setenv("IOVPR_THREADS", threads)
    root.mkdir(parents=True)
    d = root / "data"
    cfg = root / "config.json"
    cfg.write_text('{"seed": 8, "window_threshold": 0.2, "loss": {"epochs": 3, "learning_rate": 0.1, '
                   '"batch_size": 8, "pool_size": 100, "n_negatives": 10, "seed": 8}}')
    c = ["--config", str(cfg)]
    steps = [
        ["synth", "--out", str(d), "--gallery", "200", "--train-queries", "30", "--test-queries", "15",
         "--layouts", "16"],
        ["augment", "--layouts", str(d / "train_layouts.jsonl"), "--out", str(root / "layouts.jsonl")],
        ["augment", "--layouts", str(d / "test_layouts.jsonl"), "--out", str(root / "test_layouts.jsonl"),
         "--images-dir", str(root / "test_layouts"), "--queries", str(d / "test_queries.jsonl"),
         "--composite-dir", str(root / "composites")],
        ["mine", "--queries", str(d / "train_queries.jsonl"), "--gallery", str(d / "gallery.jsonl"),
         "--layouts", str(root / "layouts.jsonl"), "--out", str(root / "triplets.jsonl")],
        ["train", "--queries", str(d / "train_queries.jsonl"), "--gallery", str(d / "gallery.jsonl"),
         "--layouts", str(root / "layouts.jsonl"), "--out", str(root / "params.bin"),
         "--report", str(root / "train.csv"), "--triplets-dir", str(root / "triplets")],
        ["index", "--params", str(root / "params.bin"), "--gallery", str(d / "gallery.jsonl"),
         "--out", str(root / "gallery.store")],
        ["eval", "--queries", str(root / "composites" / "manifest.jsonl"), "--gallery", str(d / "gallery.jsonl"),
         "--params", str(root / "params.bin"), "--store", str(root / "gallery.store"),
         "--rankings-out", str(root / "rankings.jsonl"), "--report", str(root / "report.json"), "--model", "aug"],
        ["eval", "--queries", str(root / "composites" / "manifest.jsonl"), "--gallery", str(d / "gallery.jsonl"),
         "--rankings", str(root / "rankings.jsonl"), "--report", str(root / "report.csv"), "--model", "aug"],
    ]
    for s in steps:
        assert cli_main(s + c) == 0, s[0]
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@criterion(8, "determinism: two pipeline runs give byte-identical artifacts", 600)
def test_criterion_8_determinism(tmp_path, monkeypatch):
    a = _run_pipeline(tmp_path / "a", "1", monkeypatch)
    b = _run_pipeline(tmp_path / "b", "4", monkeypatch)
    assert a.keys() == b.keys()
    diff = [k for k in a if a[k] != b[k]]
    assert not diff, f"differing artifacts: {diff[:5]}"
    for must in ("params.bin", "triplets.jsonl", "triplets/epoch000.jsonl", "rankings.jsonl", "report.json",
                 "report.csv", "train.csv"):
        assert must in a
    return f"{len(a)} files identical"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
