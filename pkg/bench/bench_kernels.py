"""Compiled kernels vs the numpy fallback on representative inputs.

    python bench/bench_kernels.py [--repeat 3] [--scale 1.0] [--threads 1]

Prints one row per kernel: best-of-N wall time for each backend and the
speedup. Both backends get identical inputs and their outputs are checked
and the largest difference is reported.
"""

import argparse
import time

import numpy as np

from mvprop import _backend, _fallback
from mvprop.planes import hough_directions

try:
    from mvprop import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_of(fn, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def scene_like(rng, n):
    """A floor, a wall and a few blobs, roughly what the proposal stage sees."""
    k = n // 3
    floor = np.column_stack([rng.uniform(-2, 2, k), rng.uniform(-2, 2, k), rng.normal(0, 0.003, k)])
    wall = np.column_stack([rng.uniform(-2, 2, k), rng.normal(2, 0.003, k), rng.uniform(0, 2, k)])
    centres = rng.uniform([-1.5, -1.5, 0.1], [1.5, 1.5, 0.5], (8, 3))
    rest = n - 2 * k
    blobs = centres[rng.integers(0, 8, rest)] + rng.normal(0, 0.06, (rest, 3))
    return np.concatenate([floor, wall, blobs])


def cases(rng, scale, threads):
    n = int(200_000 * scale)
    pts = scene_like(rng, n)

    dirs = hough_directions(90, 180)
    rho_res = 0.02
    radius = float(np.linalg.norm(pts - pts.mean(0), axis=1).max())
    rho_min = -radius - rho_res
    n_rho = int(np.ceil(2 * radius / rho_res)) + 3
    centred = pts[:: max(1, n // 50_000)] - pts.mean(0)

    def hough(mod):
        def run():
            acc = np.zeros((len(dirs), n_rho), dtype=np.int32)
            mod.hough_vote(centred, dirs, rho_min, rho_res, acc, 1, threads)
            return acc
        return run

    seeds = pts[:: max(1, n // 5000)]

    def ball_means(mod):
        tree = mod.BallSumTree(pts)
        return lambda: tree.means(seeds, 0.3, threads)

    ms_pts = pts[2 * (n // 3):]
    ms_seeds = ms_pts[:: max(1, len(ms_pts) // 2000)]

    def converge(mod):
        return lambda: _backend.mean_shift_converge(ms_pts, ms_seeds, 0.3, 1e-4, 100, threads, impl=mod)

    box_pts = rng.normal(size=(int(20_000 * scale), 3))
    los = rng.uniform(-1.5, -0.5, (96, 3))
    his = rng.uniform(0.5, 1.5, (96, 3))

    def boxes(mod):
        if mod is _fallback:
            return lambda: mod.box_stats(box_pts, los, his)
        return lambda: mod.box_stats(box_pts, los, his, threads)

    cl = rng.normal(size=(int(100_000 * scale), 3))
    cl = cl[np.argsort(cl[:, 0], kind="stable")]
    lo, hi = cl.min(0) * 0.9, cl.max(0) * 0.9
    need = int(0.9 * len(cl))

    def sweep(mod):
        return lambda: mod.face_sweep(cl, lo, hi, 0, 0, need)

    return [
        ("hough_vote", hough),
        ("BallSumTree.means", ball_means),
        ("mean_shift_converge", converge),
        ("box_stats", boxes),
        ("face_sweep", sweep),
    ]


def max_diff(a, b):
    """Largest absolute difference between two outputs (summation order may
    differ between backends, so means agree to rounding, not bitwise)."""
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return float("inf")
    d = np.abs(a - b)
    return float(np.nanmax(d)) if d.size else 0.0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplier on input sizes")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    if _kernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'cython s':>11}{'numpy s':>11}{'speedup':>10}{'max diff':>11}")
    for name, make in cases(rng, args.scale, args.threads):
        tc, oc = best_of(make(_kernels), args.repeat)
        tf, of = best_of(make(_fallback), args.repeat)
        print(f"{name:<22}{tc:>11.4f}{tf:>11.4f}{tf / tc:>9.1f}x{max_diff(oc, of):>11.1e}")


if __name__ == "__main__":
    main()
