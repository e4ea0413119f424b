# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: Hough voting, flat-kernel ball means, box statistics.

Mirrors ``mvprop._fallback``; every loop is parallel over independent outputs
so results do not depend on the thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange, threadid
from libc.math cimport floor, sqrt, INFINITY, NAN

cnp.import_array()


def hough_vote(points, dirs, double rho_min, double rho_res, int[:, ::1] acc,
               int sign=1, int nthreads=1):
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], nd = d.shape[0], nr = acc.shape[1]
    cdef Py_ssize_t k, i
    cdef long b
    cdef double nx, ny, nz, inv = 1.0 / rho_res
    if n == 0:
        return
    for k in prange(nd, nogil=True, num_threads=max(nthreads, 1), schedule="static"):
        nx = d[k, 0]
        ny = d[k, 1]
        nz = d[k, 2]
        for i in range(n):
            b = <long>floor((nx * p[i, 0] + ny * p[i, 1] + nz * p[i, 2] - rho_min) * inv)
            if b >= 0 and b < nr:
                acc[k, b] += sign


def _build_sum_tree(pts, Py_ssize_t leaf_size=16):
    """Median-split kd-tree over ``pts`` with per-node bounding boxes and
    coordinate sums. Returns (permutation, node arrays)."""
    n = len(pts)
    perm = np.arange(n, dtype=np.int64)
    starts, ends, lefts, rights = [], [], [], []
    stack = [(0, n, -1, 0)]
    while stack:
        s, e, parent, side = stack.pop()
        node = len(starts)
        starts.append(s)
        ends.append(e)
        lefts.append(-1)
        rights.append(-1)
        if parent >= 0:
            (lefts if side == 0 else rights)[parent] = node
        if e - s <= leaf_size:
            continue
        sub = pts[perm[s:e]]
        ax = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        mid = (e - s) // 2
        part = np.argpartition(sub[:, ax], mid, kind="introselect")
        perm[s:e] = perm[s:e][part]
        stack.append((s + mid, e, node, 1))
        stack.append((s, s + mid, node, 0))
    starts = np.array(starts, dtype=np.int64)
    ends = np.array(ends, dtype=np.int64)
    sp = pts[perm]
    # per-node extents and sums from leaves upwards (children have larger ids)
    m = len(starts)
    lo = np.empty((m, 3))
    hi = np.empty((m, 3))
    sm = np.empty((m, 3))
    lefts = np.array(lefts, dtype=np.int64)
    rights = np.array(rights, dtype=np.int64)
    for k in range(m - 1, -1, -1):
        if lefts[k] < 0:
            blk = sp[starts[k]:ends[k]]
            lo[k] = blk.min(axis=0)
            hi[k] = blk.max(axis=0)
            sm[k] = blk.sum(axis=0)
        else:
            l, r = lefts[k], rights[k]
            lo[k] = np.minimum(lo[l], lo[r])
            hi[k] = np.maximum(hi[l], hi[r])
            sm[k] = sm[l] + sm[r]
    return perm, sp, starts, ends, lefts, rights, lo, hi, sm


DEF STACK = 256


cdef class BallSumTree:
    """kd-tree caching per-node coordinate sums for flat-kernel ball means.

    Nodes wholly inside the ball are added in one step, nodes wholly outside
    are skipped, and only leaves straddling the sphere are scanned point by
    point. The traversal order is fixed, so each query's result does not
    depend on the thread count.
    """
    cdef double[:, ::1] sp
    cdef long long[::1] nstart, nend, nleft, nright
    cdef double[:, ::1] nlo, nhi, nsum

    def __init__(self, points, Py_ssize_t leaf_size=16):
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("empty point set")
        perm, sp_arr, st, en, le, ri, lo_arr, hi_arr, sm_arr = _build_sum_tree(pts, leaf_size)
        self.sp = np.ascontiguousarray(sp_arr)
        self.nstart = st.astype(np.longlong)
        self.nend = en.astype(np.longlong)
        self.nleft = le.astype(np.longlong)
        self.nright = ri.astype(np.longlong)
        self.nlo = np.ascontiguousarray(lo_arr)
        self.nhi = np.ascontiguousarray(hi_arr)
        self.nsum = np.ascontiguousarray(sm_arr)

    def means(self, positions, double radius, int nthreads=1):
        """Mean of the points within ``radius`` (closed ball) of each
        position, and the count. Rows with count 0 are returned unchanged."""
        out_arr = np.array(positions, dtype=np.float64, copy=True, order="C").reshape(-1, 3)
        cnt_arr = np.zeros(len(out_arr), dtype=np.longlong)
        cdef double[:, ::1] out = out_arr
        cdef long long[::1] cnts = cnt_arr
        cdef double[:, ::1] sp = self.sp
        cdef long long[::1] nstart = self.nstart, nend = self.nend
        cdef long long[::1] nleft = self.nleft, nright = self.nright
        cdef double[:, ::1] nlo = self.nlo, nhi = self.nhi, nsum = self.nsum
        cdef int nt = max(nthreads, 1)
        cdef long long[:, ::1] stacks = np.zeros((nt, STACK), dtype=np.longlong)
        cdef double r2 = radius * radius
        cdef Py_ssize_t s, ns = out.shape[0], j
        cdef int tid, top
        cdef long long node, cnt
        cdef double mx, my, mz, sx, sy, sz, qx, qy, qz, dd, near, far, a, b

        for s in prange(ns, nogil=True, num_threads=nt, schedule="dynamic"):
            tid = threadid()
            mx = out[s, 0]
            my = out[s, 1]
            mz = out[s, 2]
            sx = 0.0
            sy = 0.0
            sz = 0.0
            cnt = 0
            stacks[tid, 0] = 0
            top = 1
            while top > 0:
                top = top - 1
                node = stacks[tid, top]
                # squared distance to the nearest and farthest box points
                near = 0.0
                far = 0.0
                a = nlo[node, 0] - mx
                b = mx - nhi[node, 0]
                if a > 0:
                    near = near + a * a
                elif b > 0:
                    near = near + b * b
                a = mx - nlo[node, 0]
                b = nhi[node, 0] - mx
                far = far + (a * a if a > b else b * b)
                a = nlo[node, 1] - my
                b = my - nhi[node, 1]
                if a > 0:
                    near = near + a * a
                elif b > 0:
                    near = near + b * b
                a = my - nlo[node, 1]
                b = nhi[node, 1] - my
                far = far + (a * a if a > b else b * b)
                a = nlo[node, 2] - mz
                b = mz - nhi[node, 2]
                if a > 0:
                    near = near + a * a
                elif b > 0:
                    near = near + b * b
                a = mz - nlo[node, 2]
                b = nhi[node, 2] - mz
                far = far + (a * a if a > b else b * b)
                if near > r2:
                    continue
                if far <= r2:
                    sx = sx + nsum[node, 0]
                    sy = sy + nsum[node, 1]
                    sz = sz + nsum[node, 2]
                    cnt = cnt + nend[node] - nstart[node]
                    continue
                if nleft[node] < 0:
                    for j in range(nstart[node], nend[node]):
                        qx = sp[j, 0] - mx
                        qy = sp[j, 1] - my
                        qz = sp[j, 2] - mz
                        dd = qx * qx + qy * qy + qz * qz
                        if dd <= r2:
                            sx = sx + sp[j, 0]
                            sy = sy + sp[j, 1]
                            sz = sz + sp[j, 2]
                            cnt = cnt + 1
                    continue
                # right first so the left child is visited first
                stacks[tid, top] = nright[node]
                stacks[tid, top + 1] = nleft[node]
                top = top + 2
            cnts[s] = cnt
            if cnt > 0:
                out[s, 0] = sx / cnt
                out[s, 1] = sy / cnt
                out[s, 2] = sz / cnt
        return out_arr, cnt_arr.astype(np.int64)


def box_stats(points, los, his, int nthreads=1):
    """Count and tight bounds of the points inside each closed box.

    Points inside every box (the intersection of the group) are summarised
    in one pass; only points between the intersection and the union bounding
    box are tested against each box.
    """
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    lo_np = np.ascontiguousarray(los, dtype=np.float64).reshape(-1, 3)
    hi_np = np.ascontiguousarray(his, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] lo = lo_np
    cdef double[:, ::1] hi = hi_np
    cdef Py_ssize_t nb = lo.shape[0], n = p.shape[0], b, i, k, m = 0
    counts_arr = np.zeros(nb, dtype=np.longlong)
    tlo_arr = np.full((nb, 3), np.nan)
    thi_arr = np.full((nb, 3), np.nan)
    if nb == 0:
        return counts_arr.astype(np.int64), tlo_arr, thi_arr
    cdef long long[::1] counts = counts_arr
    cdef double[:, ::1] tlo = tlo_arr
    cdef double[:, ::1] thi = thi_arr
    cdef double[::1] elo = lo_np.min(axis=0), ehi = hi_np.max(axis=0)
    cdef double[::1] clo = lo_np.max(axis=0), chi = hi_np.min(axis=0)
    shell_arr = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] shell = shell_arr
    cdef double cmin[3]
    cdef double cmax[3]
    cdef long long ccount = 0
    cdef bint in_core
    for k in range(3):
        cmin[k] = INFINITY
        cmax[k] = -INFINITY
    for i in range(n):
        if not (p[i, 0] >= elo[0] and p[i, 0] <= ehi[0] and p[i, 1] >= elo[1] and p[i, 1] <= ehi[1]
                and p[i, 2] >= elo[2] and p[i, 2] <= ehi[2]):
            continue
        in_core = (p[i, 0] >= clo[0] and p[i, 0] <= chi[0] and p[i, 1] >= clo[1] and p[i, 1] <= chi[1]
                   and p[i, 2] >= clo[2] and p[i, 2] <= chi[2])
        if in_core:
            ccount += 1
            for k in range(3):
                if p[i, k] < cmin[k]:
                    cmin[k] = p[i, k]
                if p[i, k] > cmax[k]:
                    cmax[k] = p[i, k]
        else:
            shell[m] = i
            m += 1

    cdef double x, y, z, ax, ay, az, bx, by, bz
    cdef long long c
    cdef Py_ssize_t j
    for b in prange(nb, nogil=True, num_threads=max(nthreads, 1)):
        c = ccount
        ax = cmin[0]
        ay = cmin[1]
        az = cmin[2]
        bx = cmax[0]
        by = cmax[1]
        bz = cmax[2]
        for j in range(m):
            i = shell[j]
            x = p[i, 0]
            y = p[i, 1]
            z = p[i, 2]
            if (x >= lo[b, 0] and x <= hi[b, 0] and y >= lo[b, 1] and y <= hi[b, 1]
                    and z >= lo[b, 2] and z <= hi[b, 2]):
                c = c + 1
                if x < ax:
                    ax = x
                if y < ay:
                    ay = y
                if z < az:
                    az = z
                if x > bx:
                    bx = x
                if y > by:
                    by = y
                if z > bz:
                    bz = z
        counts[b] = c
        if c > 0:
            tlo[b, 0] = ax
            tlo[b, 1] = ay
            tlo[b, 2] = az
            thi[b, 0] = bx
            thi[b, 1] = by
            thi[b, 2] = bz
    return counts_arr.astype(np.int64), tlo_arr, thi_arr


def face_sweep(points, lo, hi, int ax, int side, Py_ssize_t need):
    """Candidate positions for one cuboid face with the other five fixed.

    ``points`` must be sorted along ``ax``. Returns (counts, smin, smax) for
    each distinct admitted coordinate that still leaves ``need`` points, in
    sweep order: ascending for the min face (side 0), descending for the
    max face (side 1). smin/smax are the tight bounds of the points kept
    when the face sits on that coordinate.
    """
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef double[::1] blo = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double[::1] bhi = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i, j, k, m = 0, L, nc = 0
    sel_arr = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] sel = sel_arr
    cdef bint keep
    cdef Py_ssize_t start = 0 if side == 0 else n - 1
    cdef Py_ssize_t stepi = 1 if side == 0 else -1
    i = start
    for j in range(n):
        keep = True
        for k in range(3):
            if k != ax:
                if not (p[i, k] >= blo[k] and p[i, k] <= bhi[k]):
                    keep = False
                    break
        if keep:
            if side == 0:
                keep = p[i, ax] <= bhi[ax]
            else:
                keep = p[i, ax] >= blo[ax]
        if keep:
            sel[m] = i
            m += 1
        i += stepi
    if m < need:
        return np.empty(0, dtype=np.int64), np.empty((0, 3)), np.empty((0, 3))
    L = m - need + 1
    cdef double rmin[3]
    cdef double rmax[3]
    for k in range(3):
        rmin[k] = INFINITY
        rmax[k] = -INFINITY
    for j in range(L, m):
        i = sel[j]
        for k in range(3):
            if p[i, k] < rmin[k]:
                rmin[k] = p[i, k]
            if p[i, k] > rmax[k]:
                rmax[k] = p[i, k]
    smin_arr = np.empty((L, 3))
    smax_arr = np.empty((L, 3))
    cdef double[:, ::1] smin = smin_arr
    cdef double[:, ::1] smax = smax_arr
    for j in range(L - 1, -1, -1):
        i = sel[j]
        for k in range(3):
            if p[i, k] < rmin[k]:
                rmin[k] = p[i, k]
            if p[i, k] > rmax[k]:
                rmax[k] = p[i, k]
            smin[j, k] = rmin[k]
            smax[j, k] = rmax[k]
    first_arr = np.empty(L, dtype=np.intp)
    cdef Py_ssize_t[::1] first = first_arr
    for j in range(L):
        if j == 0 or p[sel[j], ax] != p[sel[j - 1], ax]:
            first[nc] = j
            nc += 1
    idx = first_arr[:nc]
    return (m - idx).astype(np.int64), smin_arr[idx], smax_arr[idx]
