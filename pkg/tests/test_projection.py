import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mvprop.geometry import (BoundingBox2D, CameraFrame, DepthMap, Intrinsics, PointCloud, Pose,
                             look_at, project_points)
from mvprop.projection import (FrameProposals, ObjectSegment, VisibilityParams, collapse_duplicates,
                               project_annotations, project_points_to_box, project_proposals,
                               visible_pixels)
from mvprop.proposals import Cuboid3D, Proposal3D

INTR = Intrinsics(300, 300, 159.5, 119.5, 320, 240)


def cube_points(rng, center, size, n=2000):
    return np.asarray(center) + rng.uniform(-0.5, 0.5, (n, 3)) * size


def test_segment_behind_camera(rng):
    frame = CameraFrame("f", INTR, Pose())
    assert project_points_to_box(cube_points(rng, (0, 0, -2), 0.3), frame) is None


def test_occluded_segment_has_no_box(rng):
    wall = np.full((240, 320), 1000)
    frame = CameraFrame("f", INTR, Pose(), DepthMap(wall))
    assert project_points_to_box(cube_points(rng, (0, 0, 2.0), 0.3), frame) is None
    # same object in front of the wall is visible
    assert project_points_to_box(cube_points(rng, (0, 0, 0.8), 0.3), frame) is not None


def test_boxes_clipped_to_image(rng):
    frame = CameraFrame("f", INTR, Pose())
    b = project_points_to_box(cube_points(rng, (0.6, 0, 1.0), 0.6), frame)
    assert b is not None
    assert 0 <= b.xmin <= b.xmax <= INTR.width and 0 <= b.ymin <= b.ymax <= INTR.height


def test_depth_tolerance_monotone(rng):
    pts = cube_points(rng, (0, 0, 1.5), 0.4)
    depth = np.full((240, 320), 1480)
    frame = CameraFrame("f", INTR, Pose(), DepthMap(depth))
    counts = [visible_pixels(pts, frame, VisibilityParams(depth_tolerance=t))[2].sum()
              for t in (0.01, 0.05, 0.1, 0.3)]
    assert counts == sorted(counts)


def test_zero_proposals(rng):
    frames = [CameraFrame(str(i), INTR, Pose()) for i in range(3)]
    out = project_proposals([], PointCloud(rng.random((10, 3))), frames)
    assert [len(f) for f in out] == [0, 0, 0]


def test_visibility_in_k_frames(rng):
    pts = cube_points(rng, (0, 0, 0), 0.2)
    cloud = PointCloud(pts)
    prop = Proposal3D(Cuboid3D(pts.min(0), pts.max(0)), np.arange(len(pts)), (0.5, 0.3))
    frames = [CameraFrame("a", INTR, look_at((0, -2, 0), (0, 0, 0))),
              CameraFrame("b", INTR, look_at((0, -2, 0), (0, -4, 0))),  # facing away
              CameraFrame("c", INTR, look_at((2, 0, 0.5), (0, 0, 0)))]
    out = project_proposals([prop], cloud, frames)
    assert [len(f) for f in out] == [1, 0, 1]
    assert out[0].proposal_indices == [0]


def test_annotations_empty_segments():
    frames = [CameraFrame("a", INTR, Pose())]
    assert project_annotations([], frames) == [("a", [])]


def test_duplicates_collapse_to_lowest_index():
    boxes = np.array([[0, 0, 10, 10], [0, 0, 10, 10.1], [50, 50, 60, 60], [0, 0, 10, 10]], dtype=float)
    assert collapse_duplicates(boxes, 0.95).tolist() == [0, 2]


@given(st.integers(0, 2 ** 32 - 1))
def test_points_inside_projected_cuboid(seed):
    rng = np.random.default_rng(seed)
    pts = cube_points(rng, rng.uniform(-0.3, 0.3, 3) + [0, 0, 2.0], rng.uniform(0.1, 0.6), 300)
    frame = CameraFrame("f", INTR, Pose())
    cub = Cuboid3D(pts.min(0), pts.max(0))
    u, v, z = project_points(INTR, Pose(), cub.corners())
    assert np.all(z > 0)
    pu, pv, m = visible_pixels(pts, frame, VisibilityParams())
    assert np.all(pu[m] >= u.min() - 1e-9) and np.all(pu[m] <= u.max() + 1e-9)
    assert np.all(pv[m] >= v.min() - 1e-9) and np.all(pv[m] <= v.max() + 1e-9)


def test_segment_validation():
    with pytest.raises(ValueError):
        ObjectSegment("", PointCloud([[0, 0, 1]]))
    with pytest.raises(ValueError):
        ObjectSegment("x", PointCloud(np.empty((0, 3))))
