import os
import subprocess
import sys

import numpy as np
import pytest

from facemap import _pykernels, kernels

ck = pytest.importorskip("facemap._ckernels")


def random_mesh_uv(rng, n=60, size=40):
    uv = rng.uniform(-3, size + 3, size=(n, 2))
    faces = np.array([rng.choice(n, 3, replace=False) for _ in range(150)], dtype=np.int64)
    return uv, faces


def test_rasterize_backends_bitwise_equal(rng):
    for _ in range(5):
        uv, faces = random_mesh_uv(rng)
        a = ck.rasterize(uv, faces, 40, 37)
        b = _pykernels.rasterize(uv, faces, 40, 37)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])
        assert a[2:] == b[2:]


def test_rasterize_backends_on_template_atlas(template_atlas):
    a = ck.rasterize(template_atlas.uv, template_atlas.faces.astype(np.int64), 128, 128)
    b = _pykernels.rasterize(template_atlas.uv, template_atlas.faces.astype(np.int64), 128, 128)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) and a[2:] == b[2:]
    assert np.array_equal(a[0], template_atlas.face_index)


def test_rasterize_pixel_exact_vertices():
    # vertices on pixel centers exercise the tie-breaking path
    uv = np.array([[0, 0], [4, 0], [0, 4], [4, 4]], dtype=float)
    faces = np.array([[0, 1, 2], [1, 3, 2]], dtype=np.int64)
    a = ck.rasterize(uv, faces, 5, 5)
    b = _pykernels.rasterize(uv, faces, 5, 5)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.all(a[0] >= 0)


def test_bilinear_backends_bitwise_equal(rng):
    grid = rng.normal(size=(30, 25, 3))
    mask = (rng.random((30, 25)) > 0.3).astype(np.uint8)
    uv = rng.uniform(-1, 26, size=(500, 2))
    uv[:10] = np.floor(uv[:10])
    a_out, a_miss = ck.bilinear_masked(grid, mask, uv)
    b_out, b_miss = _pykernels.bilinear_masked(grid, mask, uv)
    assert np.array_equal(a_out, b_out)
    assert np.array_equal(a_miss, b_miss)


def test_bilinear_reproduces_affine_field():
    r, c = np.mgrid[0:10, 0:12].astype(float)
    grid = np.stack([c, r, 2 * c - r + 1], axis=2)
    uv = np.array([[3.25, 4.5], [0.0, 0.0], [11.0, 9.0]])
    for impl in (ck, _pykernels):
        out, miss = impl.bilinear_masked(grid, np.ones((10, 12), np.uint8), uv)
        assert not miss.any()
        assert np.allclose(out[:, 0], uv[:, 0]) and np.allclose(out[:, 1], uv[:, 1])


def test_backend_selected():
    assert kernels.BACKEND == ("python" if os.environ.get("FACEMAP_PURE_PYTHON") else "cython")


def test_pure_python_env_switch():
    code = "import facemap.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, FACEMAP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
