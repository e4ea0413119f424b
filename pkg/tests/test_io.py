import json

import numpy as np
import pytest

from mvprop import io as mio
from mvprop.geometry import BoundingBox2D, CameraFrame, DepthMap, Intrinsics, PointCloud, Pose


def test_ply_empty(tmp_path):
    mio.save_cloud(PointCloud(np.empty((0, 3))), tmp_path / "e.ply")
    assert "element vertex 0" in (tmp_path / "e.ply").read_text()
    assert len(mio.load_cloud(tmp_path / "e.ply")) == 0


def test_ply_colored_point(tmp_path):
    pc = PointCloud([[1.0, 2.0, 3.0]], colors=[[255, 0, 0]])
    mio.save_cloud(pc, tmp_path / "c.ply")
    back = mio.load_cloud(tmp_path / "c.ply")
    np.testing.assert_array_equal(back.points, pc.points)
    np.testing.assert_array_equal(back.colors, [[255, 0, 0]])


def test_ply_round_trip_10k(tmp_path, rng):
    pc = PointCloud(rng.normal(size=(10_000, 3)) * 3)
    mio.save_cloud(pc, tmp_path / "r.ply")
    back = mio.load_cloud(tmp_path / "r.ply")
    # repr floats make this exact, not merely within 1e-9
    np.testing.assert_array_equal(back.points, pc.points)


@pytest.mark.parametrize("body,line", [
    ("1 2 3\n4 5\n", 9),
    ("1 2 3\n4 x 6\n", 9),
    ("1 2 3\n", 9),      # reported at end of file
    ("1 2 3\n4 5 6\n7 8 9\n", 10),
    ("1 2 nan\n4 5 6\n", 8),
])
def test_ply_errors_carry_line(tmp_path, body, line):
    head = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n" \
           "property float z\nend_header\n"
    (tmp_path / "b.ply").write_text(head + body)
    with pytest.raises(mio.ParseError) as exc:
        mio.load_cloud(tmp_path / "b.ply")
    assert exc.value.line == line


def test_ply_rejects_binary(tmp_path):
    (tmp_path / "b.ply").write_text("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(mio.ParseError):
        mio.load_cloud(tmp_path / "b.ply")


def test_pgm_round_trip(tmp_path, rng):
    d = DepthMap(rng.integers(0, 65536, size=(7, 11)))
    mio.save_pgm16(d, tmp_path / "d.pgm")
    np.testing.assert_array_equal(mio.load_pgm16(tmp_path / "d.pgm").values, d.values)
    raw = (tmp_path / "d.pgm").read_bytes()
    assert raw.startswith(b"P5\n11 7\n65535\n")


def test_pgm_truncated(tmp_path):
    (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n65535\n\x00\x01")
    with pytest.raises(mio.ParseError):
        mio.load_pgm16(tmp_path / "t.pgm")


def test_scene_round_trip(tmp_path):
    intr = Intrinsics(500, 500, 3.5, 2.5, 8, 6)
    d = DepthMap(np.full((6, 8), 1200))
    mio.save_pgm16(d, tmp_path / "f0.pgm")
    frames = [CameraFrame("f0", intr, Pose(np.eye(3), [1, 2, 3]))]
    mio.save_scene(tmp_path / "scene.json", intr, frames, ["f0.pgm"])
    intr2, fr = mio.load_scene(tmp_path / "scene.json")
    assert intr2 == intr and fr[0].id == "f0"
    np.testing.assert_array_equal(fr[0].depth.values, d.values)
    np.testing.assert_array_equal(fr[0].pose.translation, [1, 2, 3])


def test_boxes_and_correspondences(tmp_path):
    mio.save_boxes(tmp_path / "b.json", [("a", [BoundingBox2D(0, 1, 2, 3, "x")]),
                                        ("b", [(BoundingBox2D(0, 0, 1, 1), 7)])])
    doc = json.loads((tmp_path / "b.json").read_text())
    assert doc["frames"][1]["boxes"][0]["proposal_index"] == 7
    back = mio.load_boxes(tmp_path / "b.json")
    assert back[0][1][0].label == "x" and back[1][1][0].label is None

    mio.save_correspondences(tmp_path / "c.csv", [1.0, 2.0], [2.5, 5.0], ["f0", "f1"])
    Z, z, f = mio.load_correspondences(tmp_path / "c.csv")
    assert Z.tolist() == [1.0, 2.0] and z.tolist() == [2.5, 5.0] and f == ["f0", "f1"]
    (tmp_path / "p.csv").write_text("1.0,2.0\n3.0,6.0\n")
    Z, z, f = mio.load_correspondences(tmp_path / "p.csv")
    assert len(Z) == 2 and f is None
    (tmp_path / "bad.csv").write_text("1.0,2.0\nfoo\n")
    with pytest.raises(mio.ParseError):
        mio.load_correspondences(tmp_path / "bad.csv")
