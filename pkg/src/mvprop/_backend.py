"""Kernel backend selection.

The compiled extension is used when importable; set ``MVPROP_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("MVPROP_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback

hough_vote = _impl.hough_vote
box_stats = _impl.box_stats
face_sweep = _impl.face_sweep
BallSumTree = _impl.BallSumTree


def mean_shift_converge(points, seeds, radius, tol, max_iter, nthreads=1, impl=None):
    """Flat-kernel mean shift from each seed.

    Returns (modes, iterations). A seed stops once its displacement drops
    below ``tol`` (or its ball is empty). Seeds sitting at bitwise-identical
    positions have identical futures, so each step only evaluates the distinct
    positions among the active seeds.
    """
    tree = (impl or _impl).BallSumTree(points)
    modes = np.array(seeds, dtype=np.float64, copy=True).reshape(-1, 3)
    iters = np.zeros(len(modes), dtype=np.int64)
    active = np.arange(len(modes))
    for _ in range(max_iter):
        if len(active) == 0:
            break
        uniq, inv = np.unique(modes[active], axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        new, cnt = tree.means(uniq, radius, nthreads)
        moved = cnt > 0
        shift = np.sqrt(((new - uniq) ** 2).sum(axis=1))
        rows = moved[inv]
        modes[active[rows]] = new[inv[rows]]
        iters[active[rows]] += 1
        active = active[rows & (shift[inv] >= tol)]
    return modes, iters
