"""Bilinear face model and landmark-driven reconstruction under a weak-perspective camera.

The shape is ``V = mean + core x_id w_id x_exp w_exp``; a scaled orthographic
projection ``s * [[1,0,0],[0,1,0]] @ R @ v + T`` maps vertices to pixels.
Fitting alternates exact least-squares sub-problems over pose, expression
and (for the first frames of a sequence) identity.
"""

from __future__ import annotations

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import MeshFormatError, NumericalError, ValidationError
from .mesh import TriangleMesh

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BilinearFaceModel:
    """Core tensor of shape ``(3n, K_id, K_exp)`` with vertex-major xyz rows.

    ``exp_neutral`` is the expression weight of the neutral face (default:
    first unit vector) and ``id_init`` the identity used to start fitting
    (default: uniform, unit norm).  ``mode_order="exp_id"`` declares a core
    stored as ``(3n, K_exp, K_id)``; it is transposed on construction.
    """

    core: np.ndarray
    mean_shape: Optional[np.ndarray] = None
    faces: Optional[np.ndarray] = None
    exp_neutral: Optional[np.ndarray] = None
    id_init: Optional[np.ndarray] = None
    mode_order: str = "id_exp"

    def __post_init__(self):
        core = np.asarray(self.core, dtype=np.float64)
        if self.mode_order == "exp_id":
            core = core.transpose(0, 2, 1)
            object.__setattr__(self, "mode_order", "id_exp")
        elif self.mode_order != "id_exp":
            raise ValidationError(f"mode_order must be 'id_exp' or 'exp_id', got {self.mode_order!r}")
        if core.ndim != 3 or core.shape[0] % 3 or min(core.shape) < 1:
            raise ValidationError(f"core must have shape (3n, K_id, K_exp), got {core.shape}")
        core = np.ascontiguousarray(core)
        core.setflags(write=False)
        object.__setattr__(self, "core", core)
        rows, k_id, k_exp = core.shape
        if self.mean_shape is not None:
            mean = np.asarray(self.mean_shape, dtype=np.float64).reshape(-1)
            if mean.shape != (rows,):
                raise ValidationError(f"mean_shape must have {rows} entries")
            object.__setattr__(self, "mean_shape", mean)
        w0 = np.zeros(k_exp) if self.exp_neutral is None else np.asarray(self.exp_neutral, float)
        if self.exp_neutral is None:
            w0[0] = 1.0
        if w0.shape != (k_exp,):
            raise ValidationError("exp_neutral length must equal K_exp")
        object.__setattr__(self, "exp_neutral", w0)
        wid = np.full(k_id, 1.0 / np.sqrt(k_id)) if self.id_init is None else np.asarray(self.id_init, float)
        if wid.shape != (k_id,):
            raise ValidationError("id_init length must equal K_id")
        object.__setattr__(self, "id_init", wid)
        if self.faces is not None:
            object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))

    @property
    def n_vertices(self) -> int:
        return self.core.shape[0] // 3

    @property
    def k_id(self) -> int:
        return self.core.shape[1]

    @property
    def k_exp(self) -> int:
        return self.core.shape[2]

    def id_basis(self, w_id) -> np.ndarray:
        """``(3n, K_exp)`` matrix mapping expression weights to shape offsets for fixed identity."""
        return np.einsum("rie,i->re", self.core, w_id)

    def exp_basis(self, w_exp) -> np.ndarray:
        """``(3n, K_id)`` matrix mapping identity weights to shape offsets for fixed expression."""
        return np.einsum("rie,e->ri", self.core, w_exp)

    def mean(self) -> np.ndarray:
        return np.zeros(self.core.shape[0]) if self.mean_shape is None else self.mean_shape


def _weights(w, size, name) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape != (size,):
        raise ValidationError(f"{name} must have {size} entries, got {w.shape[0]}")
    if not np.all(np.isfinite(w)):
        raise ValidationError(f"{name} must be finite")
    return w


def model_vertices(model: BilinearFaceModel, w_id, w_exp) -> np.ndarray:
    w_id = _weights(w_id, model.k_id, "w_id")
    w_exp = _weights(w_exp, model.k_exp, "w_exp")
    flat = (model.core @ w_exp) @ w_id
    if model.mean_shape is not None:
        flat = flat + model.mean_shape
    return flat.reshape(-1, 3)


def evaluate_model(model: BilinearFaceModel, w_id, w_exp) -> TriangleMesh:
    """Contract the core with ``w_exp`` then ``w_id`` and add the mean shape.

    The returned mesh is not validated; check :attr:`TriangleMesh.degenerate`
    when weights may collapse faces.
    """
    faces = model.faces if model.faces is not None else np.zeros((0, 3), dtype=np.int64)
    return TriangleMesh(model_vertices(model, w_id, w_exp), faces, check=False)


# ---------------------------------------------------------------------------
# camera


def _check_rotation(R: np.ndarray, tol: float = 1e-8) -> None:
    if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=tol) or abs(np.linalg.det(R) - 1) > tol:
        raise ValidationError("R must be a proper rotation matrix")


@dataclass(frozen=True, eq=False)
class PoseSOP:
    """Scaled orthographic camera: scale ``s``, rotation ``R``, image translation ``T``."""

    s: float
    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        T = np.array(self.T, dtype=np.float64).reshape(2)
        if not (np.isfinite(self.s) and self.s > 0):
            raise ValidationError(f"scale must be positive, got {self.s}")
        _check_rotation(R)
        R.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @classmethod
    def identity(cls) -> "PoseSOP":
        return cls(1.0, np.eye(3), np.zeros(2))

    def to_dict(self) -> dict:
        return {"s": self.s, "R": self.R.tolist(), "T": self.T.tolist()}


def project_sop(pose: PoseSOP, points3d) -> np.ndarray:
    """``s * (R v)_xy + T`` for every row ``v`` of ``points3d``."""
    P = np.asarray(points3d, dtype=np.float64)
    return pose.s * (P @ pose.R[:2].T) + pose.T


@dataclass(frozen=True, eq=False)
class Landmarks2D:
    """Detected 2D landmark positions and the template vertices they correspond to."""

    points: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        idx = np.array(self.indices, dtype=np.int64).reshape(-1)
        if len(pts) != len(idx):
            raise ValidationError(f"{len(pts)} points but {len(idx)} indices")
        if len(idx) < 6:
            raise ValidationError(f"need at least 6 landmarks, got {len(idx)}")
        if np.any(idx < 0):
            raise ValidationError("landmark indices must be nonnegative")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("landmark points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)


def _rodrigues(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    K = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    if theta < 1e-12:
        return np.eye(3) + K
    K = K / theta
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def _nearest_rotation(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def _pose_energy(x, X, s, R):
    r = x - s * (X @ R[:2].T)
    return float(np.sum(r * r))


def _refine_pose(x, X, s, R, max_iter=50):
    """Levenberg-Marquardt on (log s, rotation) for centered correspondences."""
    e = _pose_energy(x, X, s, R)
    lam = 1e-6
    for _ in range(max_iter):
        RX = X @ R.T
        pred = s * RX[:, :2]
        r = (x - pred).reshape(-1)
        # d pred / d log s = pred ; d pred / d w = -s * (R [X]x)_xy applied to w
        J = np.empty((len(X), 2, 4))
        J[:, :, 0] = pred
        for k in range(3):
            ek = np.zeros(3)
            ek[k] = 1.0
            J[:, :, k + 1] = s * (np.cross(ek, X) @ R.T)[:, :2]
        J = J.reshape(-1, 4)
        g = J.T @ r
        H = J.T @ J
        improved = False
        for _ in range(10):
            step = np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-30), g)
            s_new = s * np.exp(step[0])
            R_new = _nearest_rotation(R @ _rodrigues(step[1:]))
            e_new = _pose_energy(x, X, s_new, R_new)
            if e_new < e:
                improved = True
                break
            lam *= 10.0
        if not improved:
            break
        done = e - e_new <= 1e-15 * max(e, 1e-300)
        s, R, e = s_new, R_new, e_new
        lam = max(lam / 10.0, 1e-12)
        if done:
            break
    return s, R


def solve_pose_points(points2d, points3d, refine: bool = True) -> PoseSOP:
    """Weak-perspective pose from 2D-3D correspondences.

    Fits an affine 2x3 camera to the centered points by least squares,
    projects it to the nearest scaled pair of orthonormal rows (SVD),
    completes ``R`` with the cross product and sets ``T`` from the
    centroids.  ``refine`` then polishes scale and rotation by
    Levenberg-Marquardt, which can only lower the reprojection energy.
    """
    x = np.asarray(points2d, dtype=np.float64)
    X = np.asarray(points3d, dtype=np.float64)
    if len(x) < 3 or len(x) != len(X):
        raise ValidationError("need at least 3 matching 2D/3D points")
    xm, Xm = x.mean(0), X.mean(0)
    xc, Xc = x - xm, X - Xm
    sv = np.linalg.svd(Xc, compute_uv=False)
    if sv[0] <= 0 or sv[1] <= 1e-9 * sv[0]:
        raise NumericalError("landmark vertices are collinear; pose is undetermined")
    At, *_ = np.linalg.lstsq(Xc, xc, rcond=None)
    A = At.T
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    rows = U @ Vt
    s = float(S.mean())
    if not s > 0:
        raise NumericalError("degenerate affine camera estimate")
    R = np.vstack([rows, np.cross(rows[0], rows[1])])
    R = _nearest_rotation(R)
    if refine:
        s, R = _refine_pose(xc, Xc, s, R)
    T = xm - s * (R[:2] @ Xm)
    return PoseSOP(s, R, T)


def solve_pose(landmarks: Landmarks2D, shape3d) -> PoseSOP:
    """Pose minimizing the landmark reprojection error for a fixed 3D shape."""
    shape3d = np.asarray(shape3d, dtype=np.float64).reshape(-1, 3)
    if landmarks.indices.max() >= len(shape3d):
        raise ValidationError("landmark index exceeds the shape's vertex count")
    return solve_pose_points(landmarks.points, shape3d[landmarks.indices])


# ---------------------------------------------------------------------------
# linear sub-problems


def _landmark_rows(indices) -> np.ndarray:
    return (3 * np.asarray(indices)[:, None] + np.arange(3)).reshape(-1)


def _projected_system(landmarks, pose, basis, offset):
    """Design matrix and target for ``x - SOP(basis @ w + offset)`` restricted to landmarks."""
    rows = _landmark_rows(landmarks.indices)
    L = len(landmarks)
    Bl = basis[rows].reshape(L, 3, -1)
    ml = offset[rows].reshape(L, 3)
    P = pose.s * pose.R[:2]
    A = np.einsum("ij,ljk->lik", P, Bl).reshape(2 * L, -1)
    b = (landmarks.points - pose.T - ml @ P.T).reshape(-1)
    return A, b


def _ridge_lstsq(A, b, ridge, prior, what):
    k = A.shape[1]
    if ridge > 0:
        A = np.vstack([A, np.sqrt(ridge) * np.eye(k)])
        b = np.concatenate([b, np.sqrt(ridge) * prior])
    w, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    if rank < k or (len(sv) and sv[-1] <= 1e-12 * sv[0]):
        raise NumericalError(f"{what} system is rank deficient (rank {rank} < {k}); use ridge > 0")
    return w


def solve_expression(
    landmarks: Landmarks2D,
    pose: PoseSOP,
    model: BilinearFaceModel,
    w_id,
    ridge: float = 0.0,
) -> np.ndarray:
    """Expression weights minimizing reprojection error plus ``ridge * ||w - w_neutral||^2``."""
    if ridge < 0:
        raise ValidationError("ridge must be nonnegative")
    w_id = _weights(w_id, model.k_id, "w_id")
    A, b = _projected_system(landmarks, pose, model.id_basis(w_id), model.mean())
    return _ridge_lstsq(A, b, ridge, model.exp_neutral, "expression")


def solve_identity(
    landmark_frames: Sequence[Landmarks2D],
    poses: Sequence[PoseSOP],
    model: BilinearFaceModel,
    w_exps: Sequence[np.ndarray],
    ridge: float = 0.0,
) -> np.ndarray:
    """Identity weights shared by several frames, each with its own pose and expression."""
    blocks = [
        _projected_system(lm, pose, model.exp_basis(w), model.mean())
        for lm, pose, w in zip(landmark_frames, poses, w_exps)
    ]
    A = np.vstack([a for a, _ in blocks])
    b = np.concatenate([b for _, b in blocks])
    return _ridge_lstsq(A, b, ridge, model.id_init, "identity")


def landmark_energy(landmarks: Landmarks2D, pose: PoseSOP, model: BilinearFaceModel, w_id, w_exp) -> float:
    """Sum of squared landmark reprojection errors."""
    V = model_vertices(model, w_id, w_exp)
    r = landmarks.points - project_sop(pose, V[landmarks.indices])
    return float(np.sum(r * r))


def relative_ridge(landmarks, pose, model, w_id, factor: float) -> float:
    """``factor`` times the largest diagonal entry of the expression normal equations."""
    A, _ = _projected_system(landmarks, pose, model.id_basis(w_id), model.mean())
    return float(factor * np.max(np.sum(A * A, axis=0)))


# ---------------------------------------------------------------------------
# sequence fitting


@dataclass
class FrameFit:
    pose: PoseSOP
    w_exp: np.ndarray
    energy: float
    converged: bool
    energy_trace: list = field(default_factory=list)


@dataclass
class SequenceFit:
    """Result of :func:`fit_sequence`.

    ``identity_trace`` and each frame's ``energy_trace`` list the objective
    after every sub-step; both are non-increasing.
    """

    w_id: np.ndarray
    frames: list
    identity_converged: bool
    identity_trace: list

    @property
    def converged(self) -> bool:
        return self.identity_converged and all(f.converged for f in self.frames)

    def __iter__(self):
        yield self.w_id
        yield [(f.pose, f.w_exp) for f in self.frames]


def _objective(lm, pose, model, w_id, w_exp, ridge):
    e = landmark_energy(lm, pose, model, w_id, w_exp)
    if ridge > 0:
        e += ridge * float(np.sum((w_exp - model.exp_neutral) ** 2))
    return e


def _pose_step(lm, pose, model, w_id, w_exp, ridge, current):
    cand = solve_pose(lm, model_vertices(model, w_id, w_exp))
    e = _objective(lm, cand, model, w_id, w_exp, ridge)
    # closed-form pose is not always the exact minimizer; never accept a worse one
    if e <= current:
        return cand, e
    return pose, current


def _done(prev, cur, tol, floor):
    return cur <= floor or prev - cur <= tol * prev


def _fit_frame(lm, model, w_id, ridge, max_iters, tol, w_exp=None, pose=None):
    w_exp = model.exp_neutral.copy() if w_exp is None else w_exp
    if pose is None:
        pose = solve_pose(lm, model_vertices(model, w_id, w_exp))
    floor = 1e-26 * max(float(np.sum(lm.points ** 2)), 1.0)
    e = _objective(lm, pose, model, w_id, w_exp, ridge)
    trace = [e]
    converged = False
    for _ in range(max_iters):
        prev = e
        pose, e = _pose_step(lm, pose, model, w_id, w_exp, ridge, e)
        trace.append(e)
        cand = solve_expression(lm, pose, model, w_id, ridge)
        e_new = _objective(lm, pose, model, w_id, cand, ridge)
        if e_new <= e:
            w_exp, e = cand, e_new
        trace.append(e)
        if _done(prev, e, tol, floor):
            converged = True
            break
    return FrameFit(pose, w_exp, e, converged, trace)


def fit_sequence(
    landmark_frames: Sequence[Landmarks2D],
    model: BilinearFaceModel,
    id_frames: int = 5,
    max_iters: int = 200,
    tol: float = 1e-12,
    ridge: float = 0.0,
    threads: int = 1,
) -> SequenceFit:
    """Reconstruct a landmark sequence with the bilinear model.

    Phase 1 estimates identity jointly over the first ``id_frames`` frames
    by alternating pose, expression and identity least squares.  Each
    identity solution is normalized to unit length with a positive sum and
    the expressions are rescaled to match (the landmark energy is invariant
    to trading scale between the two).  Phase 2 freezes the identity and
    fits pose and expression independently per frame.

    ``ridge`` (absolute) regularizes expression weights only.  Each
    sub-step is accepted only if it does not raise the objective, so
    energy traces are non-increasing.  Iteration stops when the relative
    decrease falls below ``tol`` or after ``max_iters`` rounds; the
    ``converged`` flags record which.
    """
    frames = list(landmark_frames)
    if id_frames < 1 or len(frames) < id_frames:
        raise ValidationError(f"need at least id_frames={id_frames} frames, got {len(frames)}")
    first = frames[0].indices
    for k, lm in enumerate(frames):
        if not np.array_equal(lm.indices, first):
            raise ValidationError(f"frame {k} landmark correspondence differs from frame 0")
    if first.max() >= model.n_vertices:
        raise ValidationError("landmark index exceeds the model's vertex count")

    # phase 1: identity
    head = frames[:id_frames]
    w_id = model.id_init / np.linalg.norm(model.id_init)
    w_exps = [model.exp_neutral.copy() for _ in head]
    poses = [solve_pose(lm, model_vertices(model, w_id, w)) for lm, w in zip(head, w_exps)]
    errs = [_objective(lm, p, model, w_id, w, ridge) for lm, p, w in zip(head, poses, w_exps)]
    total = sum(errs)
    trace = [total]
    floor = 1e-26 * max(sum(float(np.sum(lm.points ** 2)) for lm in head), 1.0)
    id_converged = False
    for _ in range(max_iters):
        prev = total
        for k, lm in enumerate(head):
            poses[k], errs[k] = _pose_step(lm, poses[k], model, w_id, w_exps[k], ridge, errs[k])
            cand = solve_expression(lm, poses[k], model, w_id, ridge)
            e = _objective(lm, poses[k], model, w_id, cand, ridge)
            if e <= errs[k]:
                w_exps[k], errs[k] = cand, e
            trace.append(sum(errs))
        cand_id = solve_identity(head, poses, model, w_exps)
        # keep |w_id| = 1 so the identity/expression scale cannot drift
        c = np.linalg.norm(cand_id) * (1.0 if cand_id.sum() >= 0 else -1.0)
        if c != 0:
            cand_id = cand_id / c
            cand_exps = [w * c for w in w_exps]
            cand_errs = [_objective(lm, p, model, cand_id, w, ridge) for lm, p, w in zip(head, poses, cand_exps)]
            if sum(cand_errs) <= sum(errs):
                w_id, w_exps, errs = cand_id, cand_exps, cand_errs
        total = sum(errs)
        trace.append(total)
        if _done(prev, total, tol, floor):
            id_converged = True
            break
    if not id_converged:
        log.warning("identity estimation did not converge in %d iterations", max_iters)

    # phase 2: per-frame pose and expression with frozen identity
    def fit_one(lm):
        return _fit_frame(lm, model, w_id, ridge, max_iters, tol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(fit_one, frames))
    else:
        fits = [fit_one(lm) for lm in frames]
    return SequenceFit(w_id, fits, id_converged, trace)


# ---------------------------------------------------------------------------
# persistence


def save_model(model: BilinearFaceModel, path) -> None:
    """``<u32 n><u32 K_id><u32 K_exp>`` then float64 core (C order), then the mean shape if any."""
    n = model.n_vertices
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", n, model.k_id, model.k_exp))
        fh.write(model.core.astype("<f8").tobytes())
        if model.mean_shape is not None:
            fh.write(model.mean_shape.astype("<f8").tobytes())


def load_model(path, faces=None) -> BilinearFaceModel:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise MeshFormatError("truncated .blm header", path)
    n, k_id, k_exp = struct.unpack_from("<III", raw)
    core_count = 3 * n * k_id * k_exp
    body = len(raw) - 12
    if body == 8 * core_count:
        mean = None
    elif body == 8 * (core_count + 3 * n):
        mean = np.frombuffer(raw, "<f8", 3 * n, 12 + 8 * core_count)
    else:
        raise MeshFormatError(f".blm payload size does not match header ({n}, {k_id}, {k_exp})", path)
    core = np.frombuffer(raw, "<f8", core_count, 12).reshape(3 * n, k_id, k_exp)
    return BilinearFaceModel(core, mean, faces)


def read_landmark_frames(path) -> list:
    """One JSON object per line: ``{"points": [[x, y], ...], "indices": [...]}``."""
    path = Path(path)
    frames = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                frames.append(Landmarks2D(rec["points"], rec["indices"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise MeshFormatError(f"bad landmark frame: {exc}", path, lineno) from None
    return frames


def write_landmark_frames(frames, path) -> None:
    with open(path, "w") as fh:
        for lm in frames:
            fh.write(json.dumps({"points": lm.points.tolist(), "indices": lm.indices.tolist()}) + "\n")
