import json

import numpy as np
import pytest

from mvprop import cli, synth
from mvprop import io as mio
from mvprop import pipeline as pl


def tiny_spec(n=3):
    return synth.SceneSpec(
        (synth.SupportPlane((0, 0, 1), 0.0, (0.8, 0.8)),),
        (synth.SceneObject("box", "box", (0.2, 0.12, 0.3), (-0.25, 0.0, 0.15), 20.0),
         synth.SceneObject("can", "cylinder", (0.12, 0.12, 0.2), (0.35, 0.2, 0.1))),
        synth.orbit((0, 0, 0), 1.4, 1.1, n, 220, 100, 0.1), synth.kinect_intrinsics(160, 120),
        depth_noise_sigma=0.002, sfm_scale=0.5, correspondence_outlier_fraction=0.1)


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    spec = tiny_spec()
    synth.write_scene(synth.generate_scene(spec, seed=2), spec, d)
    return d


FAST = ["proposals.radii=[0.3,0.5]", "proposals.plane_fractions=[0.5,1.0]"]


def test_config_layers(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"defaults": {"seed": 3, "threads": 2}, "seed": 4}))
    cfg = pl.load_config(tmp_path / "c.json", ["hough.rho_resolution=0.05"])
    assert cfg["seed"] == 4 and cfg["threads"] == 2 and cfg["hough"]["rho_resolution"] == 0.05


@pytest.mark.parametrize("override", ["proposals.radii=[]", "seed=1.5", "threads=0", "nope=1",
                                      "proposals.coverage=2", "evaluation.thresholds=[1.5]"])
def test_config_rejects(override):
    with pytest.raises(pl.ConfigError):
        pl.load_config(None, [override])


def test_config_hash_ignores_threads():
    a = pl.load_config(None, ["threads=1"])
    b = pl.load_config(None, ["threads=4"])
    c = pl.load_config(None, ["seed=9"])
    assert pl.config_hash(a) == pl.config_hash(b) != pl.config_hash(c)


def test_multiview_artifacts_and_determinism(scene_dir, tmp_path):
    cfg1 = pl.load_config(None, FAST + ["threads=1"])
    cfg2 = pl.load_config(None, FAST + ["threads=3"])
    m1, rep = pl.run_multiview(cfg1, scene_dir, tmp_path / "a")
    m2, _ = pl.run_multiview(cfg2, scene_dir, tmp_path / "b")
    assert m1["artifacts"] == m2["artifacts"]
    for name in ("world.ply", "fusion.json", "planes.json", "proposals.json", "boxes.json",
                 "recall.json", "recall.csv"):
        assert name in m1["artifacts"]
        assert m1["artifacts"][name] == pl.file_hash(tmp_path / "a" / name)
    assert set(m1["stage_seconds"]) == {"load", "fuse", "planes", "propose", "project", "eval"}
    assert abs(mio.read_json(tmp_path / "a" / "fusion.json")["alpha"] - 0.5) < 0.005
    assert np.all(np.diff(rep.recall, axis=1) <= 0)
    assert rep.average(0.5) == 1.0


def test_singleview_flow(scene_dir, tmp_path):
    cfg = pl.load_config(None, FAST)
    m, rep = pl.run_singleview(cfg, scene_dir, tmp_path / "s")
    assert "frames/frame_0000_proposals.json" in m["artifacts"]
    assert rep.classes == ["box", "can"]


def test_zero_frames(tmp_path):
    d = tmp_path / "empty"
    d.mkdir()
    mio.write_json(d / "scene.json", {"intrinsics": synth.kinect_intrinsics(16, 12).to_dict(), "frames": []})
    assert cli.main(["run-multiview", "--scene-dir", str(d), "--out", str(tmp_path / "o")]) == 0
    doc = mio.read_json(tmp_path / "o" / "recall.json")
    assert doc["classes"] == [] and doc["proposals_per_image"] == 0.0
    assert cli.main(["run-singleview", "--scene-dir", str(d), "--out", str(tmp_path / "o2")]) == 0


def test_stage_failure_marks_partial(scene_dir, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("no planes today")
    monkeypatch.setattr(pl, "detect_planes", boom)
    code = cli.main(["run-multiview", "--scene-dir", str(scene_dir), "--out", str(tmp_path / "p")])
    assert code == 1
    assert (tmp_path / "p" / ".partial").read_text().startswith("planes:")
    assert (tmp_path / "p" / "world.ply").exists()


def test_cli_validation_exit_codes(scene_dir, tmp_path):
    out = str(tmp_path / "x")
    assert cli.main(["run-multiview", "--scene-dir", str(scene_dir), "--out", out,
                     "--set", "proposals.radii=[]"]) == 2
    assert not (tmp_path / "x").exists()
    assert cli.main(["run-multiview", "--scene-dir", str(tmp_path / "missing"), "--out", out]) == 2
    assert cli.main(["fuse", "--scene", str(scene_dir / "scene.json"), "--out", out + ".ply",
                     "--correspondences", str(tmp_path / "nope.csv")]) == 2


def test_cli_stagewise(scene_dir, tmp_path):
    t = tmp_path
    s = ["--set", FAST[0], "--set", FAST[1]]
    assert cli.main(["fuse", "--scene", str(scene_dir / "scene.json"), "--out", str(t / "w.ply")]) == 0
    rep = mio.read_json(t / "w.ply.json")
    assert set(rep) >= {"alpha", "sample_count", "fused_points"}
    assert (t / "w.ply.csv").exists()
    assert cli.main(["planes", "--cloud", str(t / "w.ply"), "--out", str(t / "planes.json"),
                     "--filtered-dir", str(t / "filtered")]) == 0
    assert len(list((t / "filtered").glob("*.ply"))) == 5
    assert cli.main(["propose", "--cloud", str(t / "w.ply"), "--planes", str(t / "planes.json"),
                     "--out", str(t / "props.json")] + s) == 0
    props = mio.read_json(t / "props.json")
    assert props and set(props[0]) >= {"min_corner", "max_corner", "provenance", "point_count"}
    assert cli.main(["project", "--scene", str(scene_dir / "scene.json"), "--cloud", str(t / "w.ply"),
                     "--proposals", str(t / "props.json"), "--fusion-report", str(t / "w.ply.json"),
                     "--out", str(t / "boxes.json")]) == 0
    assert cli.main(["project", "--scene", str(scene_dir / "scene.json"),
                     "--segments", str(scene_dir / "segments" / "manifest.json"),
                     "--fusion-report", str(t / "w.ply.json"), "--out", str(t / "gt.json")]) == 0
    dets = {"detections": [{"frame_id": "frame_0000", "xmin": 0, "ymin": 0, "xmax": 10, "ymax": 10,
                            "label": "box", "score": 0.5}]}
    (t / "dets.json").write_text(json.dumps(dets))
    assert cli.main(["eval", "--proposals", str(t / "boxes.json"), "--gt", str(t / "gt.json"),
                     "--detections", str(t / "dets.json"), "--out", str(t / "ev")]) == 0
    for name in ("recall.json", "recall.csv", "ap.json", "ap.csv"):
        assert (t / "ev" / name).exists()
    header = (t / "ev" / "recall.csv").read_text().splitlines()[0]
    assert header.startswith("class,0.50,0.55")


def test_cli_synth(tmp_path):
    spec = tiny_spec(2)
    (tmp_path / "spec.json").write_text(json.dumps(spec.to_json()))
    assert cli.main(["synth", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "s"),
                     "--set", "seed=7"]) == 0
    assert (tmp_path / "s" / "depth" / "frame_0001.pgm").exists()
