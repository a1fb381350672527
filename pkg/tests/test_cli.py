import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from iovpr import imageio
from iovpr.cli import main
from iovpr.embed import init_params, save_params
from iovpr.manifest import read_manifest


def digest(folder: Path) -> dict:
    return {str(p.relative_to(folder)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(folder.rglob("*")) if p.is_file()}


def write_pano(folder, stem, seed, meta=True):
    img = np.random.default_rng(seed).integers(0, 256, (2000, 4000, 3), dtype=np.uint8)
    imageio.write_rgb(folder / f"{stem}.png", img)
    if meta:
        (folder / f"{stem}.json").write_text(json.dumps({"lat": 52.37, "lon": 4.89, "year": 2019, "pano_id": stem}))


def test_pano_cut_one_panorama_and_rerun(tmp_path):
    src = tmp_path / "panos"
    src.mkdir()
    write_pano(src, "TMX1", 0)
    args = ["pano-cut", "--in", str(src), "--manifest", str(tmp_path / "out" / "m.jsonl"),
            "--out", str(tmp_path / "out" / "tiles"), "--id-start", "100"]
    assert main(args) == 0
    rows = read_manifest(tmp_path / "out" / "m.jsonl", check_files=True)
    assert len(rows) == 24 and len(list((tmp_path / "out" / "tiles").glob("*.png"))) == 24
    assert sorted(r.id for r in rows) == list(range(100, 124))
    assert {(r.pitch_index, r.yaw_index) for r in rows} == {(p, y) for p in range(2) for y in range(12)}
    first = digest(tmp_path / "out")
    assert main(args) == 0
    assert digest(tmp_path / "out") == first


def test_pano_cut_empty_and_failing(tmp_path, caplog):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["pano-cut", "--in", str(empty), "--manifest", str(tmp_path / "m.jsonl"),
                 "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "m.jsonl").read_text() == ""
    assert "no panoramas" in caplog.text
    bad = tmp_path / "bad"
    bad.mkdir()
    imageio.write_rgb(bad / "small.png", np.zeros((10, 20, 3), np.uint8))
    (bad / "small.json").write_text('{"lat": 0, "lon": 0}')
    write_pano(bad, "nometa", 1, meta=False)
    assert main(["pano-cut", "--in", str(bad), "--manifest", str(tmp_path / "m2.jsonl"),
                 "--out", str(tmp_path / "t2")]) == 2


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as e:
        main(["no-such-command"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["train", "--queries", "q"])
    assert e.value.code == 1


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(d), "--gallery", "120", "--train-queries", "16", "--test-queries", "8",
                 "--layouts", "8", "--seed", "2"]) == 0
    return d


def test_eval_without_rankings_exits_2(dataset):
    assert main(["eval", "--queries", str(dataset / "test_queries.jsonl"),
                 "--gallery", str(dataset / "gallery.jsonl")]) == 2


def test_missing_input_exits_2(tmp_path):
    assert main(["index", "--params", str(tmp_path / "nope.bin"), "--gallery", str(tmp_path / "g.jsonl"),
                 "--out", str(tmp_path / "s.bin")]) == 2


def test_train_zero_epochs_writes_init(dataset, tmp_path):
    assert main(["train", "--queries", str(dataset / "train_queries.jsonl"), "--gallery",
                 str(dataset / "gallery.jsonl"), "--out", str(tmp_path / "p.bin"), "--epochs", "0",
                 "--seed", "11"]) == 0
    save_params(tmp_path / "ref.bin", init_params(11))
    assert (tmp_path / "p.bin").read_bytes() == (tmp_path / "ref.bin").read_bytes()


def test_full_pipeline_emits_report(dataset, tmp_path):
    d = dataset
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 2, "window_threshold": 0.1,
                               "loss": {"epochs": 2, "learning_rate": 0.1, "batch_size": 8, "pool_size": 50,
                                        "n_negatives": 5}}))
    common = ["--config", str(cfg)]
    assert main(["augment", "--layouts", str(d / "train_layouts.jsonl"), "--out", str(tmp_path / "lay.jsonl"),
                 "--queries", str(d / "test_queries.jsonl"), "--composite-dir", str(tmp_path / "comp")] + common) == 0
    assert main(["mine", "--queries", str(d / "train_queries.jsonl"), "--gallery", str(d / "gallery.jsonl"),
                 "--layouts", str(tmp_path / "lay.jsonl"), "--out", str(tmp_path / "trip.jsonl")] + common) == 0
    assert main(["train", "--queries", str(d / "train_queries.jsonl"), "--gallery", str(d / "gallery.jsonl"),
                 "--layouts", str(tmp_path / "lay.jsonl"), "--out", str(tmp_path / "p.bin"),
                 "--report", str(tmp_path / "train.csv"), "--triplets-dir", str(tmp_path / "trips")] + common) == 0
    assert len((tmp_path / "train.csv").read_text().splitlines()) == 3
    assert len(list((tmp_path / "trips").glob("*.jsonl"))) == 2
    assert main(["index", "--params", str(tmp_path / "p.bin"), "--gallery", str(d / "gallery.jsonl"),
                 "--out", str(tmp_path / "g.store")] + common) == 0
    assert main(["subset", "--gallery", str(d / "gallery.jsonl"), "--queries", str(tmp_path / "comp" / "manifest.jsonl"),
                 "--sizes", "110", "--out-dir", str(tmp_path / "sub")] + common) == 0
    assert main(["eval", "--queries", str(tmp_path / "comp" / "manifest.jsonl"), "--gallery",
                 str(d / "gallery.jsonl"), "--params", str(tmp_path / "p.bin"), "--store", str(tmp_path / "g.store"),
                 "--report", str(tmp_path / "rep.json"), "--rankings-out", str(tmp_path / "rk.jsonl"),
                 "--model", "aug"] + common) == 0
    rep = json.loads((tmp_path / "rep.json").read_text())[0]
    assert rep["model"] == "aug" and rep["gallery_size"] == 120 and rep["n_queries"] == 8
    assert rep["config"]["pipeline"]["seed"] == 2
    assert main(["eval", "--queries", str(tmp_path / "comp" / "manifest.jsonl"), "--gallery",
                 str(d / "gallery.jsonl"), "--rankings", str(tmp_path / "rk.jsonl"), "--extended",
                 "--report", str(tmp_path / "rep.csv")] + common) == 0
    assert (tmp_path / "rep.csv").read_text().splitlines()[0].endswith("R@100")
    assert main(["eval", "--queries", str(tmp_path / "comp" / "manifest.jsonl"), "--gallery",
                 str(d / "gallery.jsonl"), "--params", str(tmp_path / "p.bin"), "--store", str(tmp_path / "g.store"),
                 "--subset", str(tmp_path / "sub" / "subset_110.txt"), "--layout-kind", "gray",
                 "--report", str(tmp_path / "gray.json")] + common) == 0
    assert json.loads((tmp_path / "gray.json").read_text())[0]["gallery_size"] == 110


def test_coverage_select(tmp_path):
    rows = [{"id": i, "image_path": f"{i}.png", "lat": 52.37 + i * 2e-5, "lon": 4.89, "year": 2020,
             "role": "GALLERY", "pano_id": f"P{i // 2}"} for i in range(6)]
    rows.append({"id": 99, "image_path": "x.png", "lat": 52.5, "lon": 4.89, "year": 2020, "role": "GALLERY",
                 "pano_id": "Z"})
    (tmp_path / "m.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    assert main(["coverage-select", "--manifest", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "c.txt")]) == 0
    assert (tmp_path / "c.txt").read_text().split() == ["P0", "Z"]
