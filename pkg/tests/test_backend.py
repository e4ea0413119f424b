"""The compiled kernels and the numpy fallback must agree."""

import numpy as np
import pytest

from mvprop import _backend, _fallback
from mvprop.planes import hough_directions

kernels = pytest.importorskip("mvprop._kernels")


def test_backend_selected():
    assert _backend.BACKEND in ("cython", "python")


def test_hough_vote_equal(rng):
    pts = rng.normal(size=(3000, 3))
    dirs = hough_directions(30, 60)
    a = np.zeros((len(dirs), 400), dtype=np.int32)
    b = np.zeros_like(a)
    kernels.hough_vote(pts, dirs, -4.0, 0.02, a, 1, 2)
    _fallback.hough_vote(pts, dirs, -4.0, 0.02, b, 1, 1)
    np.testing.assert_array_equal(a, b)
    kernels.hough_vote(pts[:100], dirs, -4.0, 0.02, a, -1, 1)
    _fallback.hough_vote(pts[:100], dirs, -4.0, 0.02, b, -1, 1)
    np.testing.assert_array_equal(a, b)


def test_ball_means_equal(rng):
    pts = rng.normal(size=(5000, 3))
    q = rng.normal(size=(300, 3)) * 2
    ma, ca = kernels.BallSumTree(pts).means(q, 0.5, 2)
    mb, cb = _fallback.BallSumTree(pts).means(q, 0.5, 1)
    np.testing.assert_array_equal(ca, cb)
    np.testing.assert_allclose(ma, mb, rtol=0, atol=1e-12)
    # brute force
    d = np.linalg.norm(q[:, None] - pts[None], axis=2) <= 0.5
    np.testing.assert_array_equal(ca, d.sum(1))


def test_mean_shift_converge_equal(rng):
    pts = np.concatenate([rng.normal(c, 0.1, (500, 3)) for c in ((0, 0, 0), (1, 1, 0))])
    a, _ = _backend.mean_shift_converge(pts, pts[::7], 0.4, 1e-4, 100, 1, impl=kernels)
    b, _ = _backend.mean_shift_converge(pts, pts[::7], 0.4, 1e-4, 100, 1, impl=_fallback)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_mean_shift_threads_identical(rng):
    pts = rng.normal(size=(4000, 3))
    a, _ = _backend.mean_shift_converge(pts, pts[::3], 0.6, 1e-4, 100, 1, impl=kernels)
    b, _ = _backend.mean_shift_converge(pts, pts[::3], 0.6, 1e-4, 100, 4, impl=kernels)
    assert a.tobytes() == b.tobytes()


def test_box_stats_equal(rng):
    pts = rng.normal(size=(800, 3))
    los = rng.uniform(-1.5, 0, (40, 3))
    his = los + rng.uniform(0.1, 2.5, (40, 3))
    ra = kernels.box_stats(pts, los, his, 2)
    rb = _fallback.box_stats(pts, los, his)
    for x, y in zip(ra, rb):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("seed", range(4))
def test_face_sweep_equal(seed):
    rng = np.random.default_rng(seed)
    for _ in range(50):
        n = int(rng.integers(1, 300))
        pts = np.round(rng.random((n, 3)), 2)  # coarse grid: many tied coordinates
        ax, side = int(rng.integers(3)), int(rng.integers(2))
        pts = pts[np.argsort(pts[:, ax], kind="stable")]
        lo, hi = rng.random(3) * 0.3, 1 - rng.random(3) * 0.3
        need = int(rng.integers(1, n + 1))
        ra = kernels.face_sweep(pts, lo, hi, ax, side, need)
        rb = _fallback.face_sweep(pts, lo, hi, ax, side, need)
        for x, y in zip(ra, rb):
            np.testing.assert_array_equal(x, y)
