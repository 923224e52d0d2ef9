import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from facemap.audio import (
    FeatureMatrix,
    FeatureWindowTensor,
    assemble_windows,
    features_to_windows,
    load_features,
    load_windows,
    save_features,
    save_windows,
    upsample_linear,
)
from facemap.errors import MeshFormatError, ValidationError


def lerp_oracle(col, pos):
    """Scalar piecewise-linear interpolation of one column at one position."""
    i = int(pos)
    if i >= len(col) - 1:
        return col[-1]
    f = pos - i
    return col[i] * (1 - f) + col[i + 1] * f


def test_midpoint():
    out = upsample_linear(FeatureMatrix([[0.0, 2.0], [4.0, 6.0]]), 3).frames
    assert out.tolist() == [[0.0, 2.0], [2.0, 4.0], [4.0, 6.0]]


def test_same_length_is_identity(rng):
    a = rng.normal(size=(7, 3))
    assert np.array_equal(upsample_linear(FeatureMatrix(a), 7).frames, a)


def test_matches_scalar_oracle(rng):
    a = rng.normal(size=(30, 29))
    out = upsample_linear(FeatureMatrix(a), 60).frames
    for t in range(60):
        pos = t * 29 / 59
        for d in range(29):
            assert abs(out[t, d] - lerp_oracle(a[:, d], pos)) <= 1e-12


def test_endpoints_and_bounds(rng):
    a = rng.normal(size=(13, 4))
    out = upsample_linear(FeatureMatrix(a), 31).frames
    assert np.array_equal(out[0], a[0]) and np.array_equal(out[-1], a[-1])
    assert np.all(out.min(0) >= a.min(0)) and np.all(out.max(0) <= a.max(0))


def test_upsample_errors():
    with pytest.raises(ValidationError):
        upsample_linear(FeatureMatrix([[1.0]]), 1)
    with pytest.raises(ValidationError):
        upsample_linear(FeatureMatrix(np.zeros((5, 2))), 4)


def test_two_frame_window():
    feat = FeatureMatrix(np.arange(6.0).reshape(3, 2))
    win = assemble_windows(feat, 2).tensor
    assert win.shape == (3, 2, 2)
    assert win[1].tolist() == feat.frames[[0, 1]].tolist()


def test_first_window_replicates_row_zero(rng):
    feat = FeatureMatrix(rng.normal(size=(20, 3)))
    win = assemble_windows(feat, 8).tensor
    assert all(np.array_equal(win[0, j], feat.frames[0]) for j in range(4))


def test_window_index_oracle(rng):
    feat = FeatureMatrix(rng.normal(size=(11, 2)))
    W = 6
    win = assemble_windows(feat, W).tensor
    for t in range(11):
        for j in range(W):
            k = min(max(t + j - W // 2, 0), 10)
            assert np.array_equal(win[t, j], feat.frames[k])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 10), st.integers(1, 6))
def test_centers_recover_input(F, half, D):
    a = np.random.default_rng(F * 100 + D).normal(size=(F, D))
    win = assemble_windows(FeatureMatrix(a), 2 * half)
    assert np.array_equal(win.centers().frames, a)


def test_shift_equivariance(rng):
    a = rng.normal(size=(50, 3))
    W, k = 8, 3
    w0 = assemble_windows(FeatureMatrix(a), W).tensor
    w1 = assemble_windows(FeatureMatrix(np.vstack([a[:k], a[:-k]])), W).tensor
    for t in range(W // 2 + k, 50 - W // 2):
        assert np.array_equal(w1[t], w0[t - k])


@pytest.mark.parametrize("T", [1, 2])
def test_shape_contract(T, rng):
    feat = FeatureMatrix(rng.normal(size=(30 * T, 29)), rate=30)
    win = features_to_windows(feat, 60, 16)
    assert win.tensor.shape == (60 * T, 16, 29)
    assert np.array_equal(win.centers().frames, upsample_linear(feat, 60 * T).frames)


def test_window_errors():
    feat = FeatureMatrix(np.zeros((4, 2)))
    with pytest.raises(ValidationError):
        assemble_windows(feat, 3)
    with pytest.raises(ValidationError):
        assemble_windows(feat, 4, pad="zero")
    with pytest.raises(ValidationError):
        FeatureWindowTensor(np.zeros((2, 3, 1)))
    with pytest.raises(ValidationError):
        FeatureMatrix([[np.nan]])


def test_file_round_trip(tmp_path, rng):
    feat = FeatureMatrix(rng.normal(size=(9, 29)))
    save_features(feat, tmp_path / "a.feat")
    assert len((tmp_path / "a.feat").read_bytes()) == 16 + 8 * 9 * 29
    assert np.array_equal(load_features(tmp_path / "a.feat").frames, feat.frames)
    win = assemble_windows(feat, 4)
    save_windows(win, tmp_path / "a.win")
    assert np.array_equal(load_windows(tmp_path / "a.win").tensor, win.tensor)
    (tmp_path / "bad.feat").write_bytes((tmp_path / "a.feat").read_bytes()[:-1])
    with pytest.raises(MeshFormatError):
        load_features(tmp_path / "bad.feat")
