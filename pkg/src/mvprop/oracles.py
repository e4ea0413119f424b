"""Brute-force reference answers for the mode-seeking and cuboid stages.

Both are deliberately independent of the fast paths: no kernels, no trees,
no shared helpers beyond numpy.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import PointCloud
from .proposals import Cuboid3D


def _as_points(points):
    if isinstance(points, PointCloud):
        return points.points
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def oracle_modes(points, radius: float, tol: float = 1e-6, max_iter: int = 1000):
    """Mean shift from every point with all-pairs distances, then transitive
    merging of modes closer than radius/2 (each mode weighted by its seeds)."""
    pts = _as_points(points)
    n = len(pts)
    if n > 2000:
        raise ValueError("oracle_modes is limited to 2000 points")
    if n == 0:
        return []
    r2 = radius * radius
    modes = pts.copy()
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        d2 = ((modes[idx, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        w = (d2 <= r2).astype(np.float64)
        new = (w @ pts) / w.sum(axis=1, keepdims=True)
        shift = np.sqrt(((new - modes[idx]) ** 2).sum(axis=1))
        modes[idx] = new
        active[idx[shift < tol]] = False

    # union-find over the "closer than radius/2" relation
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    half2 = (radius / 2.0) ** 2
    for i in range(n):
        d2 = ((modes[i + 1:] - modes[i]) ** 2).sum(axis=1)
        for j in np.flatnonzero(d2 < half2) + i + 1:
            a, b = find(i), find(int(j))
            if a != b:
                parent[max(a, b)] = min(a, b)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    merged = [modes[g].mean(axis=0) for g in groups.values()]
    sizes = [len(g) for g in groups.values()]
    order = sorted(range(len(merged)), key=lambda k: (-sizes[k], tuple(merged[k])))
    return [merged[k] for k in order]


def _better(f, c, lo, hi, best, rel=1e-12):
    if best is None:
        return True
    bf, bc, blo, bhi = best
    if f < bf * (1 - rel) - 1e-300:
        return True
    if f > bf * (1 + rel) + 1e-300:
        return False
    if c != bc:
        return c > bc
    return tuple(lo) + tuple(hi) < tuple(blo) + tuple(bhi)


def _min_window(sorted_vals, need):
    """Smallest span of a window holding ``need`` consecutive sorted values."""
    return float((sorted_vals[need - 1:] - sorted_vals[:len(sorted_vals) - need + 1]).min())


def oracle_cuboid(points, coverage: float = 0.9) -> Cuboid3D:
    """Exhaustive search over cuboids whose faces sit on point coordinates.

    An optimal cuboid can always be shrunk onto its included points, and each
    face of such a cuboid excludes at most ``n - ceil(coverage * n)`` points,
    so only that many candidate positions per face need enumerating. x and y
    faces are enumerated explicitly; for each slab the best z window over the
    included points is found in one vectorised step.

    Slabs are visited in order of a lower bound on their objective (extent x
    smallest y and z windows holding enough points / points available) and
    skipped once the bound exceeds the incumbent, which cannot change the
    answer.
    """
    pts = _as_points(points)
    n = len(pts)
    if n > 500:
        raise ValueError("oracle_cuboid is limited to 500 points")
    need = max(1, math.ceil(coverage * n - 1e-9))
    best = None
    xs = np.sort(pts[:, 0])
    slabs = []
    for xlo in np.unique(xs[:n - need + 1]):
        for xhi in np.unique(xs[need - 1:]):
            if xhi < xlo:
                continue
            in_x = pts[(pts[:, 0] >= xlo) & (pts[:, 0] <= xhi)]
            kx = len(in_x)
            if kx < need:
                continue
            ys = np.sort(in_x[:, 1])
            dz_min = _min_window(np.sort(in_x[:, 2]), need)
            lb = (xhi - xlo) * _min_window(ys, need) * dz_min / kx
            slabs.append((lb, float(xlo), float(xhi), in_x, ys, dz_min))
    slabs.sort(key=lambda t: (t[0], t[1], t[2]))
    for lb, xlo, xhi, in_x, ys, dz_min in slabs:
        if best is not None and lb > best[0] * (1 + 1e-9):
            break
        kx = len(in_x)
        for ylo in np.unique(ys[:kx - need + 1]):
            for yhi in np.unique(ys[need - 1:]):
                if yhi < ylo:
                    continue
                area = (xhi - xlo) * (yhi - ylo)
                if best is not None and area * dz_min / kx > best[0] * (1 + 1e-9):
                    continue
                sl = in_x[(in_x[:, 1] >= ylo) & (in_x[:, 1] <= yhi)]
                k = len(sl)
                if k < need:
                    continue
                z = np.sort(sl[:, 2])
                zlo = np.unique(z[:k - need + 1])
                zhi = np.unique(z[need - 1:])
                # points with z in [a, b]: (# <= b) - (# < a)
                cnt = (np.searchsorted(z, zhi, side="right")[None, :]
                       - np.searchsorted(z, zlo, side="left")[:, None])
                dz = zhi[None, :] - zlo[:, None]
                feas = (cnt >= need) & (dz >= 0)
                if not feas.any():
                    continue
                with np.errstate(divide="ignore", invalid="ignore"):
                    obj = np.where(feas, area * dz / np.maximum(cnt, 1), np.inf)
                fmin = obj.min()
                tie = feas & (obj <= fmin * (1 + 1e-12) + 1e-300)
                for a, b in zip(*np.nonzero(tie)):
                    lo = (xlo, float(ylo), float(zlo[a]))
                    hi = (xhi, float(yhi), float(zhi[b]))
                    c = int(cnt[a, b])
                    if _better(float(obj[a, b]), c, lo, hi, best):
                        best = (float(obj[a, b]), c, lo, hi)
    _, _, lo, hi = best
    # report the cuboid tightened onto the points it includes
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    sel = pts[inside]
    return Cuboid3D(sel.min(axis=0), sel.max(axis=0))


def cuboid_objective(points, cuboid: Cuboid3D) -> float:
    pts = _as_points(points)
    c = int(cuboid.contains(pts).sum())
    return cuboid.volume / c if c else math.inf
