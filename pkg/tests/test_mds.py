import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import pdist, squareform

from facemap.errors import DegenerateEmbeddingError, MeshFormatError, ValidationError
from facemap.mds import (
    PlanarEmbedding,
    classical_mds_2d,
    double_center,
    embedding_strain,
    load_embedding,
    save_embedding,
)

SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)


def euclid(x):
    return squareform(pdist(x))


def test_zero_matrix_centers_to_zero():
    assert np.array_equal(double_center(np.zeros((4, 4))), np.zeros((4, 4)))


def test_two_points_rejected():
    with pytest.raises(ValidationError):
        double_center(np.array([[0, 1], [1, 0.0]]))


def test_square_corners_spectrum():
    B = double_center(euclid(SQUARE))
    centered = SQUARE - SQUARE.mean(0)
    gram = centered @ centered.T
    assert np.allclose(B, gram, atol=1e-12)
    # analytic Gram spectrum: column norms of the centered corners are 4 * 0.25 = 1
    assert np.allclose(np.sort(np.linalg.eigvalsh(B)), [0, 0, 1, 1], atol=1e-9)
    assert np.abs(B.sum(axis=1)).max() <= 1e-8 * np.linalg.norm(B)


def test_square_corners_embedding():
    emb = classical_mds_2d(euclid(SQUARE))
    assert np.allclose(pdist(emb.coords), pdist(SQUARE), atol=1e-9)


def test_planar_points_recovered(rng):
    X = rng.normal(size=(200, 2)) * [3.0, 1.0]
    D = euclid(X)
    emb = classical_mds_2d(D)
    off = ~np.eye(200, dtype=bool)
    assert np.max(np.abs(euclid(emb.coords)[off] - D[off]) / D[off]) < 1e-7
    B = double_center(D)
    assert embedding_strain(emb.coords, D) < 1e-12 * np.sum(B * B)
    assert emb.strain < 1e-12


def test_embedding_invariants(rng):
    X = rng.normal(size=(50, 3))
    emb = classical_mds_2d(euclid(X))
    c = emb.coords
    assert emb.eigenvalues[0] >= emb.eigenvalues[1] > 0
    assert abs(c[:, 0] @ c[:, 1]) <= 1e-8 * np.linalg.norm(c[:, 0]) * np.linalg.norm(c[:, 1])
    assert np.all(np.abs(c.mean(0)) <= 1e-9 * np.linalg.norm(c, axis=0))
    assert np.all(c[0] >= 0)
    assert 0 < emb.strain < 1


def test_collinear_is_degenerate():
    x = np.linspace(0, 1, 10)[:, None] * [1.0, 2.0]
    with pytest.raises(DegenerateEmbeddingError):
        classical_mds_2d(euclid(x))


def test_zero_coords_strain_is_norm_of_b(rng):
    D = euclid(rng.normal(size=(20, 3)))
    B = double_center(D)
    assert embedding_strain(np.zeros((20, 2)), D) == pytest.approx(np.sum(B * B), rel=1e-12)
    with pytest.raises(ValidationError):
        embedding_strain(np.zeros((19, 2)), D)


def test_mds_beats_random_rank2(rng):
    D = euclid(rng.normal(size=(60, 4)))
    emb = classical_mds_2d(D)
    best = embedding_strain(emb.coords, D)
    budget = np.linalg.norm(emb.coords)
    for _ in range(100):
        Y = rng.normal(size=(60, 2))
        Y *= budget / np.linalg.norm(Y)
        assert best <= embedding_strain(Y, D)
        P = emb.coords + 0.01 * budget * rng.normal(size=(60, 2)) / np.sqrt(120)
        assert best <= embedding_strain(P, D)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * np.pi), st.booleans())
def test_strain_rigid_invariance(theta, flip):
    rng = np.random.default_rng(3)
    D = euclid(rng.normal(size=(30, 3)))
    c = classical_mds_2d(D).coords
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    if flip:
        R = R @ np.diag([1.0, -1.0])
    a, b = embedding_strain(c, D), embedding_strain(c @ R.T, D)
    assert b == pytest.approx(a, rel=1e-9)


def test_deterministic(rng):
    D = euclid(rng.normal(size=(80, 3)))
    assert np.array_equal(classical_mds_2d(D).coords, classical_mds_2d(D.copy()).coords)


def test_iterative_path_matches_dense(rng, monkeypatch):
    import facemap.mds as mds

    D = euclid(rng.normal(size=(120, 3)) * [4, 2, 0.5])
    dense = classical_mds_2d(D)
    monkeypatch.setattr(mds, "DENSE_LIMIT", 10)
    sparse = classical_mds_2d(D)
    assert np.allclose(sparse.coords, dense.coords, atol=1e-8 * np.abs(dense.coords).max())
    assert sparse.strain >= 0


def test_emb_round_trip(tmp_path, rng):
    emb = classical_mds_2d(euclid(rng.normal(size=(15, 3))))
    save_embedding(emb, tmp_path / "e.emb")
    assert (tmp_path / "e.emb").read_text().splitlines()[0] == "15 2"
    back = load_embedding(tmp_path / "e.emb")
    assert np.array_equal(back.coords, emb.coords)
    assert np.allclose(back.eigenvalues, emb.eigenvalues, rtol=1e-9)


def test_emb_bad_header(tmp_path):
    (tmp_path / "e.emb").write_text("3 3\n0 0 0\n")
    with pytest.raises(MeshFormatError):
        load_embedding(tmp_path / "e.emb")


def test_planar_embedding_validation():
    with pytest.raises(ValidationError):
        PlanarEmbedding(np.zeros((3, 2)), [1.0, 2.0])
    with pytest.raises(ValidationError):
        PlanarEmbedding(np.zeros((3, 3)), [2.0, 1.0])
