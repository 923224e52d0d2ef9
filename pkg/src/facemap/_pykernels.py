"""Pure-NumPy versions of the compiled kernels in ``_ckernels.pyx``.

Same arithmetic in the same order, so both backends agree bit for bit.
"""

import math

import numpy as np

INSIDE_EPS = 1e-9
DEGENERATE_AREA = 1e-12


def rasterize(uv, faces, height, width):
    face_idx = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    best = np.full((height, width), -np.inf)
    multi = np.zeros((height, width), dtype=bool)
    n_degenerate = 0
    for f, (ia, ib, ic) in enumerate(faces.tolist()):
        ax, ay = uv[ia]
        bx, by = uv[ib]
        cx, cy = uv[ic]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if 0.5 * abs(area2) < DEGENERATE_AREA:
            n_degenerate += 1
            continue
        c0 = max(math.ceil(min(ax, bx, cx) - INSIDE_EPS), 0)
        c1 = min(math.floor(max(ax, bx, cx) + INSIDE_EPS), width - 1)
        r0 = max(math.ceil(min(ay, by, cy) - INSIDE_EPS), 0)
        r1 = min(math.floor(max(ay, by, cy) + INSIDE_EPS), height - 1)
        if c1 < c0 or r1 < r0:
            continue
        py, px = np.mgrid[r0:r1 + 1, c0:c1 + 1].astype(np.float64)
        w0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / area2
        w1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / area2
        w2 = 1.0 - w0 - w1
        mn = np.minimum(w0, np.minimum(w1, w2))
        sub = (slice(r0, r1 + 1), slice(c0, c1 + 1))
        inside = mn >= -INSIDE_EPS
        multi[sub] |= inside & (face_idx[sub] >= 0) & (mn > INSIDE_EPS) & (best[sub] > INSIDE_EPS)
        win = inside & (mn > best[sub])
        best[sub][win] = mn[win]
        face_idx[sub][win] = f
        b = bary[sub]
        b[win] = np.stack([w0[win], w1[win], w2[win]], axis=1)
    return face_idx, bary, n_degenerate, int(multi.sum())


def bilinear_masked(grid, mask, uv):
    height, width = grid.shape[:2]
    u, v = uv[:, 0], uv[:, 1]
    x0 = np.clip(np.floor(u).astype(np.int64), 0, width - 2)
    y0 = np.clip(np.floor(v).astype(np.int64), 0, height - 2)
    fx = u - x0
    fy = v - y0
    m = mask.astype(bool)
    w00 = np.where(m[y0, x0], (1.0 - fx) * (1.0 - fy), 0.0)
    w01 = np.where(m[y0, x0 + 1], fx * (1.0 - fy), 0.0)
    w10 = np.where(m[y0 + 1, x0], (1.0 - fx) * fy, 0.0)
    w11 = np.where(m[y0 + 1, x0 + 1], fx * fy, 0.0)
    s = w00 + w01 + w10 + w11
    missing = s <= 0.0
    safe = np.where(missing, 1.0, s)
    out = (
        w00[:, None] * grid[y0, x0] + w01[:, None] * grid[y0, x0 + 1]
        + w10[:, None] * grid[y0 + 1, x0] + w11[:, None] * grid[y0 + 1, x0 + 1]
    ) / safe[:, None]
    out[missing] = 0.0
    return out, missing
