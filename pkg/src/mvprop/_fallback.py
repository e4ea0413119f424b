"""Pure numpy/scipy versions of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` module; used when
the extension is not built or ``MVPROP_PURE_PYTHON`` is set.
"""

import numpy as np
from scipy.spatial import cKDTree

_VOTE_BLOCK = 32
_SEED_CHUNK = 512
_MAX_HITS = 2_000_000


def hough_vote(points, dirs, rho_min, rho_res, acc, sign=1, nthreads=1):
    """Add ``sign`` votes for every (direction, rho-bin) cell hit by ``points``.

    ``acc`` has shape (n_dirs, n_rho) and is updated in place.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n_dirs, n_rho = acc.shape
    if len(points) == 0:
        return
    inv = 1.0 / rho_res
    for d0 in range(0, n_dirs, _VOTE_BLOCK):
        d1 = min(d0 + _VOTE_BLOCK, n_dirs)
        rho = points @ dirs[d0:d1].T  # (n, block)
        bins = np.floor((rho - rho_min) * inv).astype(np.int64)
        ok = (bins >= 0) & (bins < n_rho)
        flat = bins + (np.arange(d1 - d0, dtype=np.int64) * n_rho)[None, :]
        counts = np.bincount(flat[ok], minlength=(d1 - d0) * n_rho)
        acc[d0:d1] += (sign * counts).reshape(d1 - d0, n_rho).astype(acc.dtype)


class BallSumTree:
    """Flat-kernel ball means over a fixed point set (cKDTree range queries)."""

    def __init__(self, points, leaf_size=16):
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise ValueError("empty point set")
        self.tree = cKDTree(self.points, leafsize=leaf_size)

    def means(self, positions, radius, nthreads=1):
        out = np.array(positions, dtype=np.float64, copy=True).reshape(-1, 3)
        counts = np.zeros(len(out), dtype=np.int64)
        # bound the neighbour lists held at once to roughly _MAX_HITS indices
        est = max(1, int(self.tree.query_ball_point(out[:1], radius, return_length=True)[0])) if len(out) else 1
        chunk = max(1, min(_SEED_CHUNK, _MAX_HITS // est))
        for c0 in range(0, len(out), chunk):
            sl = slice(c0, c0 + chunk)
            nbrs = self.tree.query_ball_point(out[sl], radius)
            lens = np.fromiter((len(n) for n in nbrs), dtype=np.int64, count=len(nbrs))
            ok = lens > 0
            if ok.any():
                flat = np.concatenate([np.asarray(n, dtype=np.int64) for n, k in zip(nbrs, ok) if k])
                starts = np.concatenate(([0], np.cumsum(lens[ok])[:-1]))
                sums = np.add.reduceat(self.points[flat], starts, axis=0)
                blk = out[sl]
                blk[ok] = sums / lens[ok][:, None]
                out[sl] = blk
            counts[sl] = lens
        return out, counts


def box_stats(points, los, his):
    """For each closed box (los[b], his[b]) return the count of points inside
    and the tight bounds of those points (NaN when the box is empty)."""
    points = np.asarray(points, dtype=np.float64)
    los = np.asarray(los, dtype=np.float64)
    his = np.asarray(his, dtype=np.float64)
    nb = len(los)
    counts = np.zeros(nb, dtype=np.int64)
    tlo = np.full((nb, 3), np.nan)
    thi = np.full((nb, 3), np.nan)
    for b in range(nb):
        inside = np.all((points >= los[b]) & (points <= his[b]), axis=1)
        c = int(inside.sum())
        counts[b] = c
        if c:
            sel = points[inside]
            tlo[b] = sel.min(axis=0)
            thi[b] = sel.max(axis=0)
    return counts, tlo, thi


def face_sweep(points, lo, hi, ax, side, need):
    """Candidate positions for one cuboid face with the other five fixed;
    ``points`` sorted along ``ax``. Returns (counts, smin, smax) per distinct
    admitted coordinate that still leaves ``need`` points, in sweep order."""
    P = np.asarray(points, dtype=np.float64)
    ok = np.ones(len(P), dtype=bool)
    for a in range(3):
        if a != ax:
            ok &= (P[:, a] >= lo[a]) & (P[:, a] <= hi[a])
    ok &= (P[:, ax] <= hi[ax]) if side == 0 else (P[:, ax] >= lo[ax])
    Q = P[ok]
    if side == 1:
        Q = Q[::-1]
    m = len(Q)
    if m < need:
        return np.empty(0, dtype=np.int64), np.empty((0, 3)), np.empty((0, 3))
    c = Q[:m - need + 1, ax]
    first = np.ones(len(c), dtype=bool)
    first[1:] = c[1:] != c[:-1]
    smin = np.minimum.accumulate(Q[::-1], axis=0)[::-1]
    smax = np.maximum.accumulate(Q[::-1], axis=0)[::-1]
    idx = np.flatnonzero(first)
    return (m - idx).astype(np.int64), smin[idx], smax[idx]
