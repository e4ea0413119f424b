import dataclasses
import pickle
import time

import numpy as np
import pytest

from mvprop import synth
from mvprop.geometry import backproject_depth, look_at, transform_cloud
from mvprop.oracles import oracle_modes
from mvprop.projection import project_annotations


def small_scene(sigma=0.003, n=3):
    return synth.SceneSpec(
        (synth.SupportPlane((0, 0, 1), 0.0, (1.0, 1.0)),),
        (synth.SceneObject("box", "box", (0.2, 0.1, 0.3), (0.0, 0.0, 0.15), 20.0),
         synth.SceneObject("can", "cylinder", (0.1, 0.1, 0.2), (0.4, 0.3, 0.1))),
        synth.orbit((0, 0, 0), 1.5, 1.2, n, 200, 120, 0.1), synth.kinect_intrinsics(160, 120),
        depth_noise_sigma=sigma)


def test_frontal_plane_constant_depth():
    spec = synth.SceneSpec((synth.SupportPlane((0, 0, 1), 0.0, (5, 5)),), (),
                           (look_at((0, 0, 1.5), (0, 0, 0), up=(0, 1, 0)),),
                           synth.kinect_intrinsics(64, 48), depth_noise_sigma=0.002)
    t = synth.generate_scene(spec)
    d = t.frames[0].depth.values
    assert d.min() > 0 and np.abs(d.astype(float) - 1500).max() <= 3 * 2 + 1
    assert t.gt_boxes == [[]]


def test_deterministic_and_thread_free():
    spec = small_scene()
    a = synth.generate_scene(spec, seed=5)
    b = synth.generate_scene(spec, seed=5, threads=3)
    assert pickle.dumps(a) == pickle.dumps(b)
    c = synth.generate_scene(spec, seed=6)
    assert pickle.dumps(a) != pickle.dumps(c)


def test_renderer_consistency():
    sigma = 0.003
    spec = small_scene(sigma)
    t = synth.generate_scene(spec, seed=1)
    for f in t.frames:
        true_depth, _ = synth.render(spec, f.pose)
        w = transform_cloud(backproject_depth(f.intrinsics, f.depth), f.pose).points
        rows, cols = np.nonzero(f.depth.values)
        z = true_depth[rows, cols]
        intr = f.intrinsics
        ray = np.column_stack([(cols - intr.cx) / intr.fx, (rows - intr.cy) / intr.fy, np.ones(len(z))])
        surface = (ray * z[:, None]) @ f.pose.rotation.T + f.pose.translation
        err = np.linalg.norm(w - surface, axis=1) / np.linalg.norm(ray, axis=1)
        assert err.max() <= 3 * sigma + 0.0005 + 1e-9


def test_gt_boxes_match_projected_segments():
    spec = small_scene(0.0, n=4)
    t = synth.generate_scene(spec)
    proj = dict(project_annotations(t.segments, t.frames))
    for f, gt in zip(t.frames, t.gt_boxes):
        by_label = {b.label: b for b in proj[f.id]}
        for g in gt:
            p = by_label[g.label]
            assert max(abs(p.xmin - g.xmin), abs(p.ymin - g.ymin), abs(p.xmax - g.xmax),
                       abs(p.ymax - g.ymax)) <= 2.0


def test_every_visible_object_has_box():
    t = synth.generate_scene(small_scene())
    for counts, boxes in zip(t.visible_pixels, t.gt_boxes):
        labels = {b.label for b in boxes}
        for lab, c in counts.items():
            if c >= 400:
                assert lab in labels


def test_spec_json_round_trip():
    spec = synth.scene_a2(n_frames=3)
    back = synth.SceneSpec.from_json(spec.to_json())
    assert back.to_json() == spec.to_json()


def test_write_scene_layout(tmp_path):
    spec = small_scene(n=2)
    out = synth.write_scene(synth.generate_scene(spec), spec, tmp_path / "s")
    for name in ("scene.json", "correspondences.csv", "gt_boxes.json", "segments/manifest.json",
                 "depth/frame_0000.pgm", "spec.json"):
        assert (out / name).exists()


def test_correspondences_encode_scale():
    spec = dataclasses.replace(small_scene(0.0), sfm_scale=0.4)
    Z, z, _ = synth.generate_scene(spec).correspondences
    # measured depth is the true depth up to 0.5 mm rounding
    assert np.abs(z - Z * 0.4).max() <= 0.0005 + 1e-12


def test_oracle_modes_trivial():
    np.testing.assert_array_equal(oracle_modes(np.array([[1.0, 2, 3]]), 0.5), [[1, 2, 3]])


def test_bad_object():
    with pytest.raises(ValueError):
        synth.SceneObject("x", "sphere", (1, 1, 1), (0, 0, 0))


@pytest.mark.slow
def test_reference_scene_render_time():
    spec = synth.scene_a1()
    t0 = time.perf_counter()
    synth.generate_scene(spec, seed=0)
    assert time.perf_counter() - t0 < 60
