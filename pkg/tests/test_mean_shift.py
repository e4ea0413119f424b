import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import blobs
from mvprop.geometry import InvalidInput
from mvprop.oracles import oracle_modes
from mvprop.proposals import mean_shift, merge_modes, seed_indices


def test_single_point():
    cl = mean_shift(np.array([[1.0, 2.0, 3.0]]), 0.3)
    assert len(cl) == 1
    np.testing.assert_array_equal(cl[0].mode, [1, 2, 3])


def test_two_blobs(rng):
    pts = blobs(rng, [(0, 0, 0), (1, 0, 0)], 50, 0.01)
    cl = mean_shift(pts, 0.3)
    assert [len(c) for c in cl] == [50, 50]
    cents = sorted(tuple(c.mode) for c in cl)
    np.testing.assert_allclose(cents, [pts[:50].mean(0), pts[50:].mean(0)], atol=0.01)


def test_bad_radius():
    with pytest.raises(InvalidInput):
        mean_shift(np.zeros((3, 3)), 0.0)


def test_empty():
    assert mean_shift(np.empty((0, 3)), 0.5) == []


def test_seed_stride():
    assert len(seed_indices(100, 20_000)) == 100
    s = seed_indices(50_001, 20_000)
    assert s[1] == 3 and len(s) <= 20_000


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.5, 2.0, 8.0]))
def test_scale_equivariance(seed, s):
    rng = np.random.default_rng(seed)
    pts = blobs(rng, rng.uniform(-2, 2, (3, 3)), 40, 0.15)
    a = mean_shift(pts, 0.4)
    b = mean_shift(pts * s, 0.4 * s)
    assert [c.point_indices.tolist() for c in a] == [c.point_indices.tolist() for c in b]
    for ca, cb in zip(a, b):
        np.testing.assert_allclose(cb.mode, ca.mode * s, rtol=1e-9, atol=1e-9)


@given(st.integers(0, 2 ** 32 - 1))
def test_partition_and_hull(seed):
    rng = np.random.default_rng(seed)
    pts = blobs(rng, rng.uniform(-1, 1, (4, 3)), 30, 0.2)
    cl = mean_shift(pts, 0.5)
    idx = np.sort(np.concatenate([c.point_indices for c in cl]))
    np.testing.assert_array_equal(idx, np.arange(len(pts)))
    lo, hi = pts.min(0), pts.max(0)
    for c in cl:
        assert np.all(c.mode >= lo - 1e-12) and np.all(c.mode <= hi + 1e-12)
    sizes = [len(c) for c in cl]
    assert sizes == sorted(sizes, reverse=True)


@given(st.integers(0, 2 ** 32 - 1))
def test_modes_match_oracle(seed):
    rng = np.random.default_rng(seed)
    pts = blobs(rng, rng.uniform(-2, 2, (3, 3)), 60, 0.1)
    ms = np.array([c.mode for c in mean_shift(pts, 0.5)])
    om = np.asarray(oracle_modes(pts, 0.5))
    assert len(ms) == len(om)
    for m in ms:
        assert np.abs(om - m).max(axis=1).min() < 1e-3


def test_subsampled_seeds_subset_of_oracle(rng):
    pts = blobs(rng, [(0, 0, 0), (2, 0, 0), (0, 2, 0)], 300, 0.1)
    om = np.asarray(oracle_modes(pts, 0.6))
    for c in mean_shift(pts, 0.6, max_seeds=100):
        assert np.abs(om - c.mode).max(axis=1).min() < 1e-3


def test_merge_modes_transitive():
    modes = np.array([[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [5, 5, 5.0]])
    labels, merged = merge_modes(modes, np.array([1, 1, 2, 1]), 0.3)
    assert labels[0] == labels[1] == labels[2] != labels[3]
    np.testing.assert_allclose(merged[labels[0]], [0.125, 0, 0])


def test_merge_modes_many_coincident():
    # tens of thousands of seeds on a few spots must not blow up memory
    rng = np.random.default_rng(0)
    spots = rng.uniform(-3, 3, (5, 3))
    modes = spots[rng.integers(0, 5, 40_000)] + rng.normal(0, 1e-6, (40_000, 3))
    labels, merged = merge_modes(modes, np.ones(40_000), 0.3)
    assert len(merged) == 5
