import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import angle_deg, plane_points, random_plane_scene
from mvprop.geometry import InvalidInput, PointCloud
from mvprop.planes import (HoughParams, canonical_plane, detect_planes, planes_from_json,
                           planes_to_json, planes_to_remove, remove_planes, round_half_away)


def test_planted_plane_with_clutter(rng):
    pts = np.concatenate([plane_points(rng, (0, 0, 1), 0.8, 1000), rng.uniform(-1, 1, (50, 3))])
    planes = detect_planes(PointCloud(pts), HoughParams(min_inliers=200))
    p = planes[0]
    assert angle_deg(p.normal, (0, 0, 1)) < 1.0
    assert abs(p.rho - 0.8) < 0.02
    assert p.inlier_count >= 990


def test_two_parallel_planes(rng):
    pts = np.concatenate([plane_points(rng, (0, 0, 1), 0.3, 2000), plane_points(rng, (0, 0, 1), 0.8, 2000)])
    planes = detect_planes(PointCloud(pts), HoughParams(min_inliers=500))
    assert len(planes) == 2
    a, b = planes
    assert abs(a.inlier_count - b.inlier_count) <= 0.02 * a.inlier_count
    if a.inlier_count == b.inlier_count:
        assert a.rho < b.rho


def test_no_supported_plane(rng):
    pts = rng.uniform(-1, 1, (300, 3))
    assert detect_planes(PointCloud(pts), HoughParams(min_inliers=100)) == []
    with pytest.raises(InvalidInput):
        detect_planes(PointCloud(np.empty((0, 3))))


def test_canonical_rho_nonnegative():
    n, rho = canonical_plane((0, 0, -2), -1.6)
    np.testing.assert_allclose(n, (0, 0, 1))
    assert rho == pytest.approx(0.8)
    n, rho = canonical_plane((0, 0, 1), -0.5)
    assert rho == pytest.approx(0.5) and n[2] == -1


def test_rounding_and_counts():
    assert round_half_away(1.98) == 2 and round_half_away(2.5) == 3 and round_half_away(-2.5) == -3
    assert planes_to_remove(6, 0.33) == 2
    assert planes_to_remove(3, 0.10) == 1    # at least one
    assert planes_to_remove(0, 0.5) == 0
    assert [planes_to_remove(10, f) for f in (0.50, 0.33, 0.25, 0.15, 0.10)] == [5, 3, 3, 2, 1]


def test_remove_all_planes_leaves_objects(rng):
    floor = plane_points(rng, (0, 0, 1), 0.0, 4000, half=2.0)
    wall = plane_points(rng, (0, 1, 0), 2.5, 3000, half=1.0, center=(0, 2.5, 1.2))
    objs = np.concatenate([rng.uniform([0.2, 0.2, 0.1], [0.4, 0.4, 0.3], (150, 3)),
                           rng.uniform([-0.6, -0.5, 0.1], [-0.4, -0.3, 0.35], (150, 3))])
    pc = PointCloud(np.concatenate([floor, wall, objs]))
    planes = detect_planes(pc, HoughParams(min_inliers=1000))
    assert len(planes) == 2
    left = remove_planes(pc, planes, 1.0)
    np.testing.assert_array_equal(left.points, objs)


def test_json_round_trip(rng):
    pts = np.concatenate([plane_points(rng, (0, 0, 1), 0.3, 800), plane_points(rng, (1, 0, 0), 2.0, 500)])
    pc = PointCloud(pts)
    planes = detect_planes(pc, HoughParams(min_inliers=300))
    back = planes_from_json(planes_to_json(planes))
    for a, b in zip(planes, back):
        np.testing.assert_array_equal(a.inlier_indices, b.inlier_indices)
    recomputed = planes_from_json(planes_to_json(planes, with_indices=False), pc)
    for a, b in zip(planes, recomputed):
        assert abs(a.inlier_count - b.inlier_count) <= 5


@given(st.integers(0, 2 ** 32 - 1))
def test_detection_invariants(seed):
    pts, _ = random_plane_scene(seed)
    params = HoughParams(min_inliers=1000)
    planes = detect_planes(PointCloud(pts), params)
    counts = [p.inlier_count for p in planes]
    assert counts == sorted(counts, reverse=True)
    for p in planes:
        assert p.rho >= 0
        assert np.all(p.distance(pts[p.inlier_indices]) <= params.inlier_threshold + 1e-12)
    again = detect_planes(PointCloud(pts), params, threads=2)
    assert [(p.normal.tolist(), p.rho, p.inlier_indices.tolist()) for p in planes] == \
        [(p.normal.tolist(), p.rho, p.inlier_indices.tolist()) for p in again]
