"""``iovpr`` command line.

Exit codes: 0 success, 1 usage error, 2 bad or missing data, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import augment, imageio, panorama
from .config import PipelineConfig
from .embed import embed_features, init_params, load_params, save_params
from .evaluation import (LARGE_K, EvalConfig, emit_report, make_distractor_subset, read_id_list, recall_at_k,
                         write_id_list)
from .geo import GeoPoint, dbscan, select_representatives
from .manifest import ManifestRecord, Role, images_from_manifest, read_manifest, write_manifest
from .mining import Gallery, build_epoch_triplets, write_triplets
from .parallel import feature_matrix
from .retrieval import RERANK_WINDOW, GalleryIndex, read_rankings, read_store, write_rankings, write_store
from .rng import stage_rng
from .training import train

log = logging.getLogger("iovpr")

EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 1, 2, 3


class DataError(Exception):
    """Missing or malformed input; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _rel(path: Path, base: Path) -> str:
    return os.path.relpath(path, base)


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.loss = replace(cfg.loss, seed=args.seed)
    return cfg


def _need(path, what):
    if path is None or not Path(path).exists():
        raise DataError(f"missing {what}: {path}")
    return Path(path)


def _layouts(path, threshold: float, kind: str):
    recs = augment.load_layouts(_need(path, "layout manifest"))
    recs = augment.filter_layouts(recs, threshold)
    if augment.LayoutKind(kind) is augment.LayoutKind.GRAY:
        recs = [r if r.kind is augment.LayoutKind.GRAY else augment.make_gray_layout(r) for r in recs]
    if not recs:
        raise DataError(f"no layouts above window proportion {threshold}")
    return recs


# --- commands -----------------------------------------------------------------

def cmd_pano_cut(args, cfg):
    src, out = Path(args.input), Path(args.out)
    manifest = Path(args.manifest)
    if not src.is_dir():
        raise DataError(f"not a directory: {src}")
    panos = sorted(src.glob("*.png"))
    if not panos:
        log.warning("no panoramas found in %s", src)
    rows, failed = [], 0
    for n, path in enumerate(panos):
        try:
            meta = json.loads(path.with_suffix(".json").read_text())
            rec = panorama.PanoramaRecord(imageio.read_rgb(path), GeoPoint(meta["lat"], meta["lon"]),
                                          int(meta.get("year", 0)), str(meta.get("pano_id", path.stem)))
            tiles = panorama.process_panorama(rec)
        except (OSError, KeyError, ValueError) as exc:
            failed += 1
            log.error("skipping %s: %s", path.name, exc)
            continue
        for t in tiles:
            dest = out / t.name
            imageio.write_rgb(dest, t.image)
            rows.append(ManifestRecord(args.id_start + n * 24 + t.pitch_index * panorama.N_YAW + t.yaw_index,
                                       _rel(dest, manifest.parent), rec.location.lat, rec.location.lon,
                                       rec.capture_year, Role.GALLERY, rec.pano_id, t.yaw_index, t.pitch_index))
    write_manifest(manifest, rows)
    if panos and failed == len(panos):
        raise DataError("every panorama failed")
    log.info("%d tiles from %d panoramas (%d failed)", len(rows), len(panos) - failed, failed)


def cmd_coverage_select(args, cfg):
    recs = read_manifest(_need(args.manifest, "manifest"))
    points = {}
    for r in recs:
        points.setdefault(r.pano_id if r.pano_id is not None else r.id, r.location)
    keys = sorted(points, key=str)
    labels = dbscan([points[k] for k in keys], args.eps, args.min_pts, ids=keys)
    chosen = select_representatives(labels)
    ordered = sorted(chosen) if all(isinstance(k, int) for k in chosen) else sorted(chosen, key=str)
    Path(args.out).write_text("".join(f"{k}\n" for k in ordered))
    log.info("%d of %d locations selected", len(chosen), len(keys))


def cmd_augment(args, cfg):
    threshold = args.threshold if args.threshold is not None else cfg.window_threshold
    kind = args.kind or cfg.layout_kind
    src = _need(args.layouts, "layout manifest")
    recs = _layouts(src, threshold, kind)
    out = Path(args.out)
    img_dir = Path(args.images_dir) if args.images_dir else out.parent / "layouts_out"
    rows = []
    for r in recs:
        ip = img_dir / f"{r.layout_id}.png"
        mp = img_dir / f"{r.layout_id}_mask.png"
        imageio.write_rgb(ip, r.image)
        imageio.write_mask(mp, r.mask)
        rows.append(augment.layout_to_row(r, _rel(ip, out.parent), _rel(mp, out.parent)))
    augment.write_layout_manifest(out, rows)
    if args.queries:
        qs = images_from_manifest(_need(args.queries, "query manifest"))
        rng = stage_rng(cfg.seed, "augment/pairing")
        picks = augment.pair_layouts(len(qs), len(recs), rng)
        cdir = Path(args.composite_dir or out.parent / "composites")
        qrows = []
        qmeta = {r.id: r for r in read_manifest(args.queries)}
        cman = cdir / "manifest.jsonl"
        for q, k in zip(qs, picks):
            lay = recs[int(k)]
            dest = cdir / f"{q.id}.png"
            imageio.write_rgb(dest, augment.composite(q.image(), lay.mask, lay.image))
            qrows.append(replace(qmeta[q.id], image_path=_rel(dest, cman.parent)))
        write_manifest(cman, qrows)
    log.info("%d layouts kept (> %.2f, %s)", len(recs), threshold, kind)


def _train_inputs(args, cfg):
    queries = images_from_manifest(_need(args.queries, "query manifest"))
    gallery = images_from_manifest(_need(args.gallery, "gallery manifest"))
    if not gallery:
        raise DataError("empty gallery")
    threshold = args.threshold if args.threshold is not None else cfg.window_threshold
    kind = args.layout_kind or cfg.layout_kind
    layouts = _layouts(args.layouts, threshold, kind) if args.layouts else None
    return queries, gallery, layouts


def cmd_mine(args, cfg):
    queries, gallery, layouts = _train_inputs(args, cfg)
    params = load_params(_need(args.params, "params")) if args.params else init_params(cfg.seed)
    feats = feature_matrix(gallery)
    g = Gallery([x.id for x in gallery], [x.location for x in gallery], embed_features(params, feats))
    batch = build_epoch_triplets(queries, layouts, g, params, cfg.loss.mining(), stage_rng(cfg.seed, "train/epoch0"))
    write_triplets(args.out, batch.triplets)
    log.info("%d triplets, %d queries skipped", len(batch.triplets), batch.skipped)


def cmd_train(args, cfg):
    loss = cfg.loss
    for name in ("epochs", "learning_rate", "batch_size", "margin"):
        v = getattr(args, name)
        if v is not None:
            loss = replace(loss, **{name: v})
    queries, gallery, layouts = _train_inputs(args, cfg)
    init = load_params(_need(args.init, "initial params")) if args.init else None

    def dump(epoch, batch):
        if args.triplets_dir:
            Path(args.triplets_dir).mkdir(parents=True, exist_ok=True)
            write_triplets(Path(args.triplets_dir) / f"epoch{epoch:03d}.jsonl", batch.triplets)

    params, report = train(queries, gallery, layouts, loss, init, on_epoch=dump)
    save_params(args.out, params)
    if args.report:
        report.write_csv(args.report)


def cmd_index(args, cfg):
    params = load_params(_need(args.params, "params"))
    gallery = images_from_manifest(_need(args.gallery, "gallery manifest"))
    if not gallery:
        raise DataError("empty gallery")
    write_store(args.out, [g.id for g in gallery], embed_features(params, feature_matrix(gallery)))


def _query_transform(kind: str, masks):
    if augment.LayoutKind(kind) is augment.LayoutKind.REAL:
        return None
    if masks:
        provider = augment.FileMaskProvider(masks)
    else:
        log.warning("gray inference without --masks: treating whole query as window")
        provider = augment.FullFrameMaskProvider()
    return lambda item, img: augment.gray_query(img, provider, str(item.id))


def cmd_eval(args, cfg):
    qrecs = read_manifest(_need(args.queries, "query manifest"))
    grecs = read_manifest(_need(args.gallery, "gallery manifest"))
    subset = set(read_id_list(_need(args.subset, "subset file"))) if args.subset else None
    k_values = LARGE_K if args.extended else (tuple(args.k) if args.k else cfg.eval.k_values)
    ecfg = EvalConfig(args.radius if args.radius is not None else cfg.eval.radius, k_values)
    if args.rankings:
        rankings = read_rankings(_need(args.rankings, "rankings"))
    elif args.params and args.store:
        params = load_params(_need(args.params, "params"))
        ids, emb = read_store(_need(args.store, "embedding store"))
        if subset is not None:
            keep = np.isin(ids, list(subset))
            ids, emb = ids[keep], emb[keep]
        if ids.size == 0:
            raise DataError("empty gallery after subsetting")
        index = GalleryIndex(ids, emb)
        queries = images_from_manifest(args.queries)
        kind = args.layout_kind or cfg.layout_kind
        qemb = embed_features(params, feature_matrix(queries, _query_transform(kind, args.masks)))
        depth = max(max(ecfg.k_values), RERANK_WINDOW)  # deep enough to reuse saved rankings with --extended
        rankings = index.search(qemb, depth, [q.id for q in queries])
        if args.rankings_out:
            write_rankings(args.rankings_out, rankings)
    else:
        raise DataError("no rankings: pass --rankings, or --params with --store")
    glocs = {r.id: r.location for r in grecs if subset is None or r.id in subset}
    report = recall_at_k(rankings, {r.id: r.location for r in qrecs}, glocs, ecfg, args.model, len(glocs))
    report.config = {"pipeline": cfg.to_dict(), "radius": ecfg.radius, "k_values": list(ecfg.k_values)}
    if args.report:
        emit_report(report, args.report)
    print(" ".join(f"R@{k}={v:.1f}" for k, v in report.recalls.items()))


def cmd_subset(args, cfg):
    grecs = read_manifest(_need(args.gallery, "gallery manifest"))
    qrecs = read_manifest(_need(args.queries, "query manifest"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    radius = args.radius if args.radius is not None else cfg.eval.radius
    for size in sorted(args.sizes):
        try:
            ids = make_distractor_subset([r.id for r in grecs], [r.location for r in grecs],
                                         [r.location for r in qrecs], size, radius, stage_rng(cfg.seed, "subset"))
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        write_id_list(out / f"subset_{size}.txt", ids)


def cmd_synth(args, cfg):
    from .synthetic import CityConfig, SyntheticCity, make_layouts

    out = Path(args.out)
    city = SyntheticCity(CityConfig(args.gallery, n_train_queries=args.train_queries,
                                    n_test_queries=args.test_queries, seed=cfg.seed))

    def dump(items, name, role):
        rows = []
        man = out / f"{name}.jsonl"
        for it in items:
            dest = out / name / f"{it.id}.png"
            imageio.write_rgb(dest, it.image())
            rows.append(ManifestRecord(it.id, _rel(dest, out), it.location.lat, it.location.lon, 2020, role))
        write_manifest(man, rows)

    dump(city.gallery(), "gallery", Role.GALLERY)
    dump(city.train_queries(), "train_queries", Role.QUERY)
    dump(city.test_queries(), "test_queries", Role.QUERY)
    for name, n in (("train_layouts", args.layouts), ("test_layouts", max(1, args.layouts // 2))):
        rows = []
        for rec in make_layouts(n, cfg.seed, name):
            ip = out / name / f"{rec.layout_id}.png"
            mp = out / name / f"{rec.layout_id}_mask.png"
            imageio.write_rgb(ip, rec.image)
            imageio.write_mask(mp, rec.mask)
            rows.append(augment.layout_to_row(rec, _rel(ip, out), _rel(mp, out)))
        augment.write_layout_manifest(out / f"{name}.jsonl", rows)


# --- wiring -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
    common.add_argument("--config", default=None, help="pipeline config JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="iovpr", description="Inside-out visual place recognition pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("pano-cut", parents=[common], help="panoramas -> 24 perspective tiles each")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--id-start", type=int, default=0)
    s.set_defaults(func=cmd_pano_cut)

    s = sub.add_parser("coverage-select", parents=[common], help="DBSCAN coverage subsampling")
    s.add_argument("--manifest", required=True)
    s.add_argument("--eps", type=float, default=5.0)
    s.add_argument("--min-pts", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_coverage_select)

    s = sub.add_parser("augment", parents=[common], help="filter layouts, make gray layouts, composite queries")
    s.add_argument("--layouts", required=True)
    s.add_argument("--threshold", type=float, default=None)
    s.add_argument("--kind", choices=["real", "gray"], default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--images-dir", default=None)
    s.add_argument("--queries", default=None)
    s.add_argument("--composite-dir", default=None)
    s.set_defaults(func=cmd_augment)

    for name, func, hlp in (("mine", cmd_mine, "mine one epoch of triplets"),
                            ("train", cmd_train, "train the reference embedder")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--queries", required=True)
        s.add_argument("--gallery", required=True)
        s.add_argument("--layouts", default=None)
        s.add_argument("--threshold", type=float, default=None)
        s.add_argument("--layout-kind", choices=["real", "gray"], default=None)
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)
        if name == "mine":
            s.add_argument("--params", default=None)
        else:
            s.add_argument("--init", default=None)
            s.add_argument("--report", default=None)
            s.add_argument("--triplets-dir", default=None)
            s.add_argument("--epochs", type=int, default=None)
            s.add_argument("--learning-rate", type=float, default=None)
            s.add_argument("--batch-size", type=int, default=None)
            s.add_argument("--margin", type=float, default=None)

    s = sub.add_parser("index", parents=[common], help="offline gallery embedding")
    s.add_argument("--params", required=True)
    s.add_argument("--gallery", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("eval", parents=[common], help="retrieve and compute Recall@K")
    s.add_argument("--queries", required=True)
    s.add_argument("--gallery", required=True)
    s.add_argument("--rankings", default=None, help="precomputed rankings (JSON-Lines)")
    s.add_argument("--params", default=None)
    s.add_argument("--store", default=None)
    s.add_argument("--rankings-out", default=None)
    s.add_argument("--layout-kind", choices=["real", "gray"], default=None)
    s.add_argument("--masks", default=None, help="directory of <query_id>.png window masks")
    s.add_argument("--subset", default=None, help="gallery id list restricting the search")
    s.add_argument("--radius", type=float, default=None)
    s.add_argument("--k", type=int, nargs="+", default=None)
    s.add_argument("--extended", action="store_true", help="add K = 50, 75, 100")
    s.add_argument("--model", default="")
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("subset", parents=[common], help="nested distractor subsets")
    s.add_argument("--gallery", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--sizes", type=int, nargs="+", required=True)
    s.add_argument("--radius", type=float, default=None)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_subset)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic city dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--gallery", type=int, default=200)
    s.add_argument("--train-queries", type=int, default=40)
    s.add_argument("--test-queries", type=int, default=20)
    s.add_argument("--layouts", type=int, default=20)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        args.func(args, cfg)
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (FileNotFoundError, json.JSONDecodeError, ValueError, KeyError) as exc:
        log.error("bad input: %s", exc)
        return EXIT_DATA
    except Exception:  # pragma: no cover - reported, not expected
        log.exception("internal error")
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
