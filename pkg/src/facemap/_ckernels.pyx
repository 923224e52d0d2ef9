# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for atlas rasterization and mask-aware bilinear sampling.

Must stay numerically identical to ``_pykernels``: same formulas, same
operation order, same tie-breaking.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor

cnp.import_array()

cdef double INSIDE_EPS = 1e-9
cdef double DEGENERATE_AREA = 1e-12


def rasterize(const double[:, ::1] uv, const long long[:, ::1] faces, int height, int width):
    cdef Py_ssize_t m = faces.shape[0]
    face_idx_arr = np.full((height, width), -1, dtype=np.int64)
    bary_arr = np.zeros((height, width, 3), dtype=np.float64)
    best_arr = np.full((height, width), -np.inf, dtype=np.float64)
    multi_arr = np.zeros((height, width), dtype=np.uint8)
    cdef long long[:, ::1] face_idx = face_idx_arr
    cdef double[:, :, ::1] bary = bary_arr
    cdef double[:, ::1] best = best_arr
    cdef unsigned char[:, ::1] multi = multi_arr
    cdef Py_ssize_t f, r, c, r0, r1, c0, c1
    cdef double ax, ay, bx, by, cx, cy, area2, px, py, w0, w1, w2, mn
    cdef double xmin, xmax, ymin, ymax
    cdef long n_degenerate = 0

    for f in range(m):
        ax = uv[faces[f, 0], 0]; ay = uv[faces[f, 0], 1]
        bx = uv[faces[f, 1], 0]; by = uv[faces[f, 1], 1]
        cx = uv[faces[f, 2], 0]; cy = uv[faces[f, 2], 1]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if 0.5 * (area2 if area2 >= 0 else -area2) < DEGENERATE_AREA:
            n_degenerate += 1
            continue
        xmin = min(ax, min(bx, cx)); xmax = max(ax, max(bx, cx))
        ymin = min(ay, min(by, cy)); ymax = max(ay, max(by, cy))
        c0 = <Py_ssize_t>ceil(xmin - INSIDE_EPS); c1 = <Py_ssize_t>floor(xmax + INSIDE_EPS)
        r0 = <Py_ssize_t>ceil(ymin - INSIDE_EPS); r1 = <Py_ssize_t>floor(ymax + INSIDE_EPS)
        if c0 < 0: c0 = 0
        if r0 < 0: r0 = 0
        if c1 > width - 1: c1 = width - 1
        if r1 > height - 1: r1 = height - 1
        for r in range(r0, r1 + 1):
            py = <double>r
            for c in range(c0, c1 + 1):
                px = <double>c
                w0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / area2
                w1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / area2
                w2 = 1.0 - w0 - w1
                mn = min(w0, min(w1, w2))
                if mn < -INSIDE_EPS:
                    continue
                if face_idx[r, c] >= 0 and mn > INSIDE_EPS and best[r, c] > INSIDE_EPS:
                    multi[r, c] = 1
                if mn > best[r, c]:
                    best[r, c] = mn
                    face_idx[r, c] = f
                    bary[r, c, 0] = w0
                    bary[r, c, 1] = w1
                    bary[r, c, 2] = w2
    return face_idx_arr, bary_arr, int(n_degenerate), int(multi_arr.sum())


def bilinear_masked(const double[:, :, ::1] grid, const unsigned char[:, ::1] mask, const double[:, ::1] uv):
    cdef Py_ssize_t n = uv.shape[0]
    cdef Py_ssize_t height = grid.shape[0], width = grid.shape[1]
    out_arr = np.zeros((n, 3), dtype=np.float64)
    missing_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] out = out_arr
    cdef unsigned char[::1] missing = missing_arr
    cdef Py_ssize_t i, x0, y0, k
    cdef double u, v, fx, fy, w00, w01, w10, w11, s

    for i in range(n):
        u = uv[i, 0]
        v = uv[i, 1]
        x0 = <Py_ssize_t>floor(u)
        y0 = <Py_ssize_t>floor(v)
        if x0 < 0: x0 = 0
        if y0 < 0: y0 = 0
        if x0 > width - 2: x0 = width - 2
        if y0 > height - 2: y0 = height - 2
        fx = u - <double>x0
        fy = v - <double>y0
        w00 = (1.0 - fx) * (1.0 - fy) if mask[y0, x0] else 0.0
        w01 = fx * (1.0 - fy) if mask[y0, x0 + 1] else 0.0
        w10 = (1.0 - fx) * fy if mask[y0 + 1, x0] else 0.0
        w11 = fx * fy if mask[y0 + 1, x0 + 1] else 0.0
        s = w00 + w01 + w10 + w11
        if s <= 0.0:
            missing[i] = 1
            continue
        for k in range(3):
            out[i, k] = (w00 * grid[y0, x0, k] + w01 * grid[y0, x0 + 1, k]
                         + w10 * grid[y0 + 1, x0, k] + w11 * grid[y0 + 1, x0 + 1, k]) / s
    return out_arr, missing_arr.astype(bool)
