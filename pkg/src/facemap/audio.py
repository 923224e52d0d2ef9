"""Speech-feature resampling and overlapping window assembly."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MeshFormatError, ValidationError

DEFAULT_ALPHABET = 29  # 26 letters, space, apostrophe, blank
DEFAULT_WINDOW = 16
SOURCE_FPS = 30.0
TARGET_FPS = 60.0


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """``F x D`` feature stream sampled at ``rate`` frames per second."""

    frames: np.ndarray
    rate: float = SOURCE_FPS

    def __post_init__(self):
        a = np.array(self.frames, dtype=np.float64, order="C")
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValidationError(f"features must be a nonempty F x D matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("features must be finite")
        if not self.rate > 0:
            raise ValidationError(f"rate must be positive, got {self.rate}")
        a.setflags(write=False)
        object.__setattr__(self, "frames", a)
        object.__setattr__(self, "rate", float(self.rate))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class FeatureWindowTensor:
    """``F x W x D`` windows; ``tensor[t, W // 2]`` is frame ``t``."""

    tensor: np.ndarray
    rate: float = TARGET_FPS

    def __post_init__(self):
        a = np.array(self.tensor, dtype=np.float64, order="C")
        if a.ndim != 3 or min(a.shape) < 1:
            raise ValidationError(f"window tensor must be F x W x D, got shape {a.shape}")
        if a.shape[1] % 2:
            raise ValidationError(f"window size must be even, got {a.shape[1]}")
        a.setflags(write=False)
        object.__setattr__(self, "tensor", a)

    @property
    def window(self) -> int:
        return self.tensor.shape[1]

    def centers(self) -> FeatureMatrix:
        return FeatureMatrix(self.tensor[:, self.window // 2, :], self.rate)


def upsample_linear(feat: FeatureMatrix, target_frames: int, rate: float = TARGET_FPS) -> FeatureMatrix:
    """Resample to ``target_frames`` rows by linear interpolation between neighbouring frames.

    Output row ``t`` sits at source position ``t (F - 1) / (target_frames - 1)``,
    so the first and last rows are copied exactly.
    """
    target_frames = int(target_frames)
    F = feat.n_frames
    if target_frames < 2:
        raise ValidationError(f"target_frames must be at least 2, got {target_frames}")
    if target_frames < F:
        raise ValidationError(f"target_frames ({target_frames}) is below the input length ({F})")
    src = feat.frames
    if F == 1:
        return FeatureMatrix(np.repeat(src, target_frames, axis=0), rate)
    pos = np.arange(target_frames) * (F - 1) / (target_frames - 1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), F - 2)
    frac = (pos - i0)[:, None]
    out = (1.0 - frac) * src[i0] + frac * src[i0 + 1]
    # exact where the position hits a source row
    hit = frac[:, 0] == 0.0
    out[hit] = src[i0[hit]]
    out[-1] = src[-1]
    return FeatureMatrix(out, rate)


def assemble_windows(feat: FeatureMatrix, window: int = DEFAULT_WINDOW, pad: str = "edge_replicate") -> FeatureWindowTensor:
    """Centered windows: ``out[t, j] = feat[clamp(t + j - W/2, 0, F - 1)]``."""
    if pad != "edge_replicate":
        raise ValidationError(f"unsupported padding {pad!r}; only 'edge_replicate' is available")
    window = int(window)
    if window < 2 or window % 2:
        raise ValidationError(f"window must be an even integer >= 2, got {window}")
    F = feat.n_frames
    idx = np.arange(F)[:, None] + np.arange(window)[None, :] - window // 2
    np.clip(idx, 0, F - 1, out=idx)
    return FeatureWindowTensor(feat.frames[idx], feat.rate)


def features_to_windows(feat: FeatureMatrix, target_fps: float = TARGET_FPS, window: int = DEFAULT_WINDOW) -> FeatureWindowTensor:
    """Upsample by ``target_fps / feat.rate`` and cut windows; ``30T x D`` becomes ``60T x W x D``."""
    target = int(round(feat.n_frames * target_fps / feat.rate))
    return assemble_windows(upsample_linear(feat, target, target_fps), window)


# ---------------------------------------------------------------------------
# binary I/O: u64 shape header followed by float64 payload


def _write(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(path, ndim: int) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    head = 8 * ndim
    if len(raw) < head:
        raise MeshFormatError("truncated header", path)
    shape = struct.unpack_from(f"<{ndim}Q", raw)
    count = int(np.prod(shape))
    if len(raw) != head + 8 * count:
        raise MeshFormatError(f"payload size does not match header shape {shape}", path)
    return np.frombuffer(raw, "<f8", count, head).reshape(shape).copy()


def save_features(feat: FeatureMatrix, path) -> None:
    """``.feat``: ``<u64 F><u64 D>`` then row-major float64."""
    _write(path, feat.frames)


def load_features(path, rate: float = SOURCE_FPS) -> FeatureMatrix:
    return FeatureMatrix(_read(path, 2), rate)


def save_windows(win: FeatureWindowTensor, path) -> None:
    """``.win``: ``<u64 F><u64 W><u64 D>`` then row-major float64."""
    _write(path, win.tensor)


def load_windows(path) -> FeatureWindowTensor:
    return FeatureWindowTensor(_read(path, 3))
