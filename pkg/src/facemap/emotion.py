"""Emotion amplification by region-weighted displacement transfer.

A reconstructed mesh is matched to the closest calm exemplar of a
reference bank; the displacement between that identity's emotional and
calm exemplars is added, scaled per vertex by an upper- or lower-face
weight field.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BankError, MeshFormatError, ValidationError
from .geodesics import HeatSolverContext, build_heat_context, geodesic_from_source
from .mesh import EmotionLabel, TriangleMesh, load_mesh, read_landmarks, landmark_sidecar_path

EXPRESSIONS = ("calm", "eyebrows_up", "eyebrows_down", "grin")

# target emotion -> (exemplar expression, weight region)
ROUTING = {
    EmotionLabel.ANGRY: ("eyebrows_down", "upper"),
    EmotionLabel.SURPRISE: ("eyebrows_up", "upper"),
    EmotionLabel.HAPPY: ("grin", "lower"),
}

MIN_SUPPORT = 0.01


@dataclass(frozen=True, eq=False)
class RegionWeightField:
    """Per-vertex weights in [0, 1] for the upper (brow/eye) and lower (cheek/mouth) face."""

    upper: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        for name in ("upper", "lower"):
            w = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
                raise ValidationError(f"{name} weights must lie in [0, 1]")
            if np.count_nonzero(w) < MIN_SUPPORT * len(w):
                raise ValidationError(f"{name} weights are nonzero on fewer than 1% of vertices")
            w.setflags(write=False)
            object.__setattr__(self, name, w)
        if len(self.upper) != len(self.lower):
            raise ValidationError("upper and lower weight fields differ in length")

    @property
    def n_vertices(self) -> int:
        return len(self.upper)

    def region(self, name: str) -> np.ndarray:
        if name not in ("upper", "lower"):
            raise ValidationError(f"unknown region {name!r}")
        return getattr(self, name)


def falloff_weights(distance: np.ndarray, falloff: float) -> np.ndarray:
    """``clamp(1 - distance / falloff, 0, 1)``."""
    if not falloff > 0:
        raise ValidationError(f"falloff must be positive, got {falloff}")
    return np.clip(1.0 - np.asarray(distance) / falloff, 0.0, 1.0)


def build_region_weights(
    mesh: TriangleMesh,
    boundary_upper,
    boundary_lower,
    falloff: float,
    ctx: Optional[HeatSolverContext] = None,
    t_multiplier: float = 1.0,
) -> RegionWeightField:
    """Weights that fall off linearly with geodesic distance from each boundary vertex set."""
    if not falloff > 0:
        raise ValidationError(f"falloff must be positive, got {falloff}")
    sets = []
    for name, b in (("upper", boundary_upper), ("lower", boundary_lower)):
        b = np.unique(np.asarray(b, dtype=np.int64).reshape(-1))
        if b.size == 0:
            raise ValidationError(f"{name} boundary set is empty")
        sets.append(b)
    if ctx is None:
        ctx = build_heat_context(mesh, t_multiplier)
    fields = []
    for b in sets:
        w = falloff_weights(geodesic_from_source(ctx, mesh, b), falloff)
        w[b] = 1.0
        fields.append(w)
    return RegionWeightField(*fields)


def save_weights(w, path) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{x!r}\n" for x in np.asarray(w, dtype=np.float64).tolist())


def load_weights(path) -> np.ndarray:
    path = Path(path)
    vals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                vals.append(float(line))
            except ValueError:
                raise MeshFormatError(f"bad weight {line.strip()!r}", path, lineno) from None
    return np.array(vals)


def save_region_weights(field: RegionWeightField, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_weights(field.upper, d / "upper.wgt")
    save_weights(field.lower, d / "lower.wgt")


def load_region_weights(directory) -> RegionWeightField:
    d = Path(directory)
    return RegionWeightField(load_weights(d / "upper.wgt"), load_weights(d / "lower.wgt"))


# ---------------------------------------------------------------------------
# alignment


def similarity_transform(src: np.ndarray, dst: np.ndarray):
    """Least-squares ``s, R, t`` with ``s * R @ src_i + t ~ dst_i`` (Umeyama)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    var = float(np.sum(xs * xs)) / len(src)
    if var <= 0:
        raise ValidationError("feature points are coincident; cannot align")
    U, S, Vt = np.linalg.svd(xd.T @ xs / len(src))
    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[-1] = -1.0
    R = U @ np.diag(d) @ Vt
    s = float(np.sum(S * d)) / var
    t = mu_d - s * (R @ mu_s)
    return s, R, t


def _apply(transform, points):
    s, R, t = transform
    return s * (points @ R.T) + t


@dataclass(frozen=True, eq=False)
class Exemplar:
    identity: str
    expression: str
    mesh: TriangleMesh


@dataclass(frozen=True, eq=False)
class ReferenceBank:
    """Immutable set of exemplar meshes in template topology."""

    exemplars: tuple
    feature_indices: np.ndarray

    def __post_init__(self):
        ex = tuple(e if isinstance(e, Exemplar) else Exemplar(*e) for e in self.exemplars)
        if not ex:
            raise BankError("reference bank is empty")
        faces = ex[0].mesh.faces
        seen = set()
        for e in ex:
            if e.expression not in EXPRESSIONS:
                raise BankError(f"unknown expression tag {e.expression!r}; expected one of {EXPRESSIONS}")
            if e.mesh.n_vertices != ex[0].mesh.n_vertices or not np.array_equal(e.mesh.faces, faces):
                raise BankError(f"exemplar {e.identity}/{e.expression} does not share template connectivity")
            key = (e.identity, e.expression)
            if key in seen:
                raise BankError(f"duplicate exemplar {key}")
            seen.add(key)
        missing = sorted({e.identity for e in ex} - {e.identity for e in ex if e.expression == "calm"})
        if missing:
            raise BankError(f"identities without a calm exemplar: {missing}")
        idx = np.array(self.feature_indices, dtype=np.int64).reshape(-1)
        if idx.size < 3 or idx.min() < 0 or idx.max() >= ex[0].mesh.n_vertices:
            raise BankError("feature indices must be at least 3 valid vertex indices")
        idx.setflags(write=False)
        object.__setattr__(self, "exemplars", ex)
        object.__setattr__(self, "feature_indices", idx)

    @property
    def identities(self) -> list:
        return sorted({e.identity for e in self.exemplars})

    def get(self, identity: str, expression: str) -> TriangleMesh:
        for e in self.exemplars:
            if e.identity == identity and e.expression == expression:
                return e.mesh
        raise BankError(f"bank has no {expression!r} exemplar for identity {identity!r}")


def exemplar_distance(mesh: TriangleMesh, exemplar: TriangleMesh, feature_indices) -> float:
    """Feature-point SSD after similarity alignment of the exemplar to ``mesh``."""
    q = mesh.vertices[feature_indices]
    p = exemplar.vertices[feature_indices]
    if np.array_equal(p, q):
        return 0.0
    r = q - _apply(similarity_transform(p, q), p)
    return float(np.sum(r * r))


def nearest_calm_exemplar(mesh: TriangleMesh, bank: ReferenceBank):
    """Identity tag of the closest calm exemplar and its aligned feature SSD.

    An exhaustive scan; ties go to the lexically smallest identity.
    """
    if mesh.n_vertices != bank.exemplars[0].mesh.n_vertices:
        raise ValidationError("mesh is not in the bank's template topology")
    best, best_d = None, np.inf
    for e in sorted((e for e in bank.exemplars if e.expression == "calm"), key=lambda e: e.identity):
        d = exemplar_distance(mesh, e.mesh, bank.feature_indices)
        if d < best_d:
            best, best_d = e.identity, d
    return best, best_d


def emotion_displacement(mesh: TriangleMesh, bank: ReferenceBank, identity: str, expression: str) -> np.ndarray:
    """Emotional minus calm exemplar, both mapped by the calm-to-query similarity."""
    calm = bank.get(identity, expression="calm")
    emo = bank.get(identity, expression)
    idx = bank.feature_indices
    T = similarity_transform(calm.vertices[idx], mesh.vertices[idx])
    return _apply(T, emo.vertices) - _apply(T, calm.vertices)


def augment_emotion(
    mesh: TriangleMesh,
    target,
    bank: ReferenceBank,
    weights: RegionWeightField,
    gain: float = 1.0,
) -> TriangleMesh:
    """Add ``gain * w(v) * delta(v)`` to every vertex.

    ``delta`` comes from the nearest identity's exemplar pair for the target
    emotion and ``w`` from the matching face region.  Vertices with zero
    weight are returned bit-for-bit unchanged.  A warning is issued when
    ``gain * max|delta|`` reaches half the shortest input edge, beyond which
    triangles may fold.
    """
    target = EmotionLabel.parse(target)
    if target == EmotionLabel.NEUTRAL:
        raise ValidationError("target emotion is neutral; augmentation would be a no-op")
    if not (np.isfinite(gain) and gain >= 0):
        raise ValidationError(f"gain must be nonnegative, got {gain}")
    if weights.n_vertices != mesh.n_vertices:
        raise ValidationError("weight field does not match the mesh vertex count")
    expression, region = ROUTING[target]
    identity, _ = nearest_calm_exemplar(mesh, bank)
    delta = emotion_displacement(mesh, bank, identity, expression)
    w = weights.region(region)
    step = gain * w[:, None] * delta
    out = np.where(w[:, None] > 0, mesh.vertices + step, mesh.vertices)
    edges = mesh.edges()
    min_edge = float(np.min(np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)))
    if gain * float(np.max(np.linalg.norm(delta, axis=1))) >= 0.5 * min_edge:
        warnings.warn(
            "gain * max displacement exceeds half the shortest edge; output may contain folded triangles",
            RuntimeWarning,
            stacklevel=2,
        )
    return TriangleMesh(out, mesh.faces, mesh.landmark_indices, check=False)


# ---------------------------------------------------------------------------
# manifest


def load_bank(manifest_path, feature_indices=None) -> ReferenceBank:
    """Read a bank manifest.

    The manifest is either a JSON list of ``{"identity", "expression",
    "mesh"}`` records or an object with an ``"exemplars"`` list and optional
    ``"feature_indices"``.  Mesh paths are relative to the manifest.
    Without explicit indices, the landmarks of the first exemplar are used.
    """
    path = Path(manifest_path)
    try:
        doc = json.loads(path.read_text())
    except ValueError as exc:
        raise MeshFormatError(f"bad bank manifest: {exc}", path) from None
    records = doc if isinstance(doc, list) else doc.get("exemplars", [])
    if feature_indices is None and isinstance(doc, dict):
        feature_indices = doc.get("feature_indices")
    exemplars = []
    for rec in records:
        try:
            mesh_path = path.parent / rec["mesh"]
            exemplars.append(Exemplar(str(rec["identity"]), str(rec["expression"]), load_mesh(mesh_path)))
        except (KeyError, TypeError):
            raise BankError(f"manifest record {rec!r} needs identity, expression and mesh") from None
    if not exemplars:
        raise BankError("reference bank is empty")
    if feature_indices is None:
        first = exemplars[0].mesh
        if first.landmark_indices is None:
            sidecar = landmark_sidecar_path(path)
            if not sidecar.exists():
                raise BankError("no feature indices: give them in the manifest or as exemplar landmarks")
            feature_indices = read_landmarks(sidecar)
        else:
            feature_indices = first.landmark_indices
    return ReferenceBank(tuple(exemplars), feature_indices)


def write_manifest(records, path, feature_indices=None) -> None:
    doc = {"exemplars": [{"identity": i, "expression": e, "mesh": str(m)} for i, e, m in records]}
    if feature_indices is not None:
        doc["feature_indices"] = [int(k) for k in feature_indices]
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
