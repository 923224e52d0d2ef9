"""Compare the compiled and NumPy kernel backends on the synthetic face atlas.

Usage: ``python benchmarks/bench_kernels.py [--repeat N] [--resolution R]``
"""

import argparse
import time
import warnings

import numpy as np

from facemap import _pykernels, synthetic
from facemap.geodesics import all_pairs_geodesics, build_heat_context
from facemap.geometry_map import build_atlas, encode
from facemap.mds import classical_mds_2d


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--resolution", type=int, default=128)
    args = ap.parse_args()
    try:
        from facemap import _ckernels
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    face = synthetic.face_template()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ctx = build_heat_context(face.mesh)
    emb = classical_mds_2d(all_pairs_geodesics(ctx, face.mesh))
    atlas = build_atlas(emb, face.mesh, args.resolution)
    faces = atlas.faces.astype(np.int64)
    gmap = encode(face.mesh, atlas)
    mask = gmap.mask.astype(np.uint8)
    R = args.resolution

    cases = {
        "rasterize": lambda k: (lambda: k.rasterize(atlas.uv, faces, R, R)),
        "bilinear_masked": lambda k: (lambda: k.bilinear_masked(gmap.grid, mask, atlas.uv)),
    }
    print(f"{face.mesh.n_vertices} vertices, {face.mesh.n_faces} faces, {R}x{R} grid, best of {args.repeat}")
    print(f"{'kernel':<18}{'cython ms':>12}{'python ms':>12}{'speedup':>10}  identical")
    for name, make in cases.items():
        tc, oc = best_of(make(_ckernels), args.repeat)
        tp, op = best_of(make(_pykernels), args.repeat)
        same = all(np.array_equal(a, b) for a, b in zip(oc, op))
        print(f"{name:<18}{1e3 * tc:>12.3f}{1e3 * tp:>12.3f}{tp / tc:>10.1f}  {same}")


if __name__ == "__main__":
    main()
