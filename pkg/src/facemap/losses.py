"""Training objectives and evaluation metrics as pure NumPy functions.

Expectations are batch means.  Adversarial and classification terms take
discriminator outputs as plain arrays; no networks live here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .mesh import EmotionLabel, FrameSequence, TriangleMesh


def _vector(x, name) -> np.ndarray:
    a = np.array(x, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValidationError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} must be finite")
    return a


@dataclass(frozen=True, eq=False)
class BatchPredictions:
    """Discriminator and generator outputs for one batch.

    Attributes
    ----------
    d_src_real, d_src_fake : (B,) arrays
        Probability that a real / generated sample is real, in (0, 1).
    cls_logprob_real, cls_logprob_fake : (B,) arrays
        Log-probability the classifier assigns to the labeled class.
    recon_pairs : sequence of (x, x_cycle) pairs of equal shape
    """

    d_src_real: np.ndarray
    d_src_fake: np.ndarray
    cls_logprob_real: np.ndarray
    cls_logprob_fake: np.ndarray
    recon_pairs: tuple = ()

    def __post_init__(self):
        for name in ("d_src_real", "d_src_fake"):
            p = _vector(getattr(self, name), name)
            if np.any(p <= 0) or np.any(p >= 1):
                raise ValidationError(f"{name} must lie strictly inside (0, 1)")
            object.__setattr__(self, name, p)
        for name in ("cls_logprob_real", "cls_logprob_fake"):
            lp = _vector(getattr(self, name), name)
            if np.any(lp > 0):
                raise ValidationError(f"{name} holds positive log-probabilities")
            object.__setattr__(self, name, lp)
        pairs = []
        for k, (x, y) in enumerate(self.recon_pairs):
            x = np.asarray(x, dtype=np.float64)
            y = np.asarray(y, dtype=np.float64)
            if x.shape != y.shape:
                raise ValidationError(f"reconstruction pair {k} has shapes {x.shape} and {y.shape}")
            pairs.append((x, y))
        object.__setattr__(self, "recon_pairs", tuple(pairs))


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 1.0
    lambda_rec: float = 10.0

    def __post_init__(self):
        if not (self.lambda_cls >= 0 and self.lambda_rec >= 0):
            raise ValidationError("loss weights must be nonnegative")


def adversarial_loss(batch: BatchPredictions) -> float:
    """``mean log D(x) + mean log(1 - D(G(x, c)))``."""
    return float(np.mean(np.log(batch.d_src_real)) + np.mean(np.log1p(-batch.d_src_fake)))


def classification_loss_real(batch: BatchPredictions) -> float:
    return float(-np.mean(batch.cls_logprob_real))


def classification_loss_fake(batch: BatchPredictions) -> float:
    return float(-np.mean(batch.cls_logprob_fake))


def reconstruction_loss(batch: BatchPredictions) -> float:
    """Mean over samples of the mean absolute cycle residual."""
    if not batch.recon_pairs:
        raise ValidationError("batch has no reconstruction pairs")
    return float(np.mean([np.mean(np.abs(x - y)) for x, y in batch.recon_pairs]))


def discriminator_objective(batch: BatchPredictions, w: LossWeights = LossWeights()) -> float:
    return -adversarial_loss(batch) + w.lambda_cls * classification_loss_real(batch)


def generator_objective(batch: BatchPredictions, w: LossWeights = LossWeights()) -> float:
    return (
        adversarial_loss(batch)
        + w.lambda_cls * classification_loss_fake(batch)
        + w.lambda_rec * reconstruction_loss(batch)
    )


# ---------------------------------------------------------------------------
# vertex-level losses and metrics


@dataclass(frozen=True, eq=False)
class VertexWeightMask:
    """Nonnegative per-vertex weights with maximum exactly 1."""

    w: np.ndarray

    def __post_init__(self):
        w = _vector(self.w, "weights")
        if np.any(w < 0) or w.max() != 1.0:
            raise ValidationError("weights must be nonnegative with maximum 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def normalized(cls, raw) -> "VertexWeightMask":
        raw = _vector(raw, "weights")
        if raw.max() <= 0:
            raise ValidationError("weights must have a positive entry")
        return cls(raw / raw.max())


def mouth_weight_mask(mesh: TriangleMesh, mouth_indices, falloff: float, floor: float = 0.1) -> VertexWeightMask:
    """``floor + (1 - floor) * clamp(1 - d / falloff, 0, 1)`` with ``d`` the geodesic distance to the mouth."""
    from .emotion import falloff_weights
    from .geodesics import build_heat_context, geodesic_from_source

    if not 0 <= floor <= 1:
        raise ValidationError("floor must lie in [0, 1]")
    ctx = build_heat_context(mesh)
    d = geodesic_from_source(ctx, mesh, mouth_indices)
    return VertexWeightMask(floor + (1.0 - floor) * falloff_weights(d, falloff))


def _positions(seq) -> np.ndarray:
    if isinstance(seq, FrameSequence):
        return seq.positions()
    a = np.asarray(seq, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValidationError(f"expected a frame sequence or (frames, n, 3) array, got shape {a.shape}")
    return a


def _aligned(pred, ref, subset=None):
    P, Q = _positions(pred), _positions(ref)
    if P.shape != Q.shape:
        raise ValidationError(f"sequences are misaligned: {P.shape} vs {Q.shape}")
    if subset is not None:
        idx = np.asarray(subset, dtype=np.int64).reshape(-1)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= P.shape[1]:
            raise ValidationError("subset indices out of range or empty")
        P, Q = P[:, idx], Q[:, idx]
    return P, Q


def weighted_position_loss(pred, ref, mask: VertexWeightMask) -> float:
    """Mean over frames and vertices of ``w(v) * |pred_v - ref_v|^2``."""
    P, Q = _aligned(pred, ref)
    if len(mask.w) != P.shape[1]:
        raise ValidationError("mask length does not match the vertex count")
    sq = np.sum((P - Q) ** 2, axis=2)
    return float(np.mean(sq * mask.w[None, :]))


def reconstruction_error(pred, ref, subset=None) -> float:
    """RE: mean vertex Euclidean distance over frames and ``subset``."""
    P, Q = _aligned(pred, ref, subset)
    return float(np.mean(np.linalg.norm(P - Q, axis=2)))


def velocity_error(pred, ref, subset=None) -> float:
    """VE: mean Euclidean distance between predicted and reference frame-to-frame displacements."""
    P, Q = _aligned(pred, ref, subset)
    if P.shape[0] < 2:
        raise ValidationError("velocity error needs at least 2 frames")
    return float(np.mean(np.linalg.norm(np.diff(P, axis=0) - np.diff(Q, axis=0), axis=2)))


def classification_error(predicted: Sequence, true: Sequence) -> float:
    """CE: fraction of mismatched emotion labels."""
    if len(predicted) != len(true):
        raise ValidationError(f"label lists differ in length: {len(predicted)} vs {len(true)}")
    if not predicted:
        raise ValidationError("label lists are empty")
    a = [EmotionLabel.parse(x) for x in predicted]
    b = [EmotionLabel.parse(x) for x in true]
    return sum(x != y for x, y in zip(a, b)) / len(a)


def metrics_report(pred, ref, subset=None, predicted_labels=None, true_labels=None) -> dict:
    """``{"RE", "VE", "CE"}``; VE needs two frames and CE needs labels, otherwise ``None``."""
    P, _ = _aligned(pred, ref, subset)
    report = {
        "RE": reconstruction_error(pred, ref, subset),
        "VE": velocity_error(pred, ref, subset) if P.shape[0] >= 2 else None,
        "CE": None,
    }
    if predicted_labels is not None and true_labels is not None:
        report["CE"] = classification_error(predicted_labels, true_labels)
    return report


def metrics_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True)


def read_labels(path) -> list:
    """One emotion label per line."""
    with open(path) as fh:
        return [EmotionLabel.parse(line) for line in fh if line.strip()]


def optional_subset(path: Optional[str]):
    """Vertex subset from a landmark-style index file, or ``None`` for all vertices."""
    if path is None:
        return None
    from .mesh import read_landmarks

    return read_landmarks(path)
