"""Synthetic assets so the library and its tests run without external data.

Provides an icosphere, a flat grid, a face-like template surface with
landmarks and regions, a small bilinear face model, a toy reference bank
and synthetic landmark sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Unit icosahedron refined ``subdivisions`` times by midpoint splitting and reprojection."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.array(p, dtype=float) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(radius * np.array(v), np.array(faces))


def grid_mesh(nx: int = 21, ny: int = 21, width: float = 1.0, height: float = 1.0) -> TriangleMesh:
    """Flat ``nx`` x ``ny`` vertex grid in the z=0 plane, row-major, split along one diagonal."""
    xs = np.linspace(0.0, width, nx)
    ys = np.linspace(0.0, height, ny)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    idx = np.arange(nx * ny).reshape(ny, nx)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])
    return TriangleMesh(verts, faces)


# --------------------------------------------------------------------------
# face-like template


@dataclass(frozen=True)
class FaceTemplate:
    mesh: TriangleMesh
    mouth: np.ndarray
    upper_boundary: np.ndarray
    lower_boundary: np.ndarray


def _height(x, y):
    # gentle dome with a nose ridge and brow bulge, in template units (~100 wide)
    z = 18.0 * np.exp(-(x ** 2 / 2500.0 + y ** 2 / 3600.0))
    z += 6.0 * np.exp(-(x ** 2 / 40.0 + (y - 2.0) ** 2 / 300.0))
    z += 2.0 * np.exp(-((np.abs(x) - 18.0) ** 2 / 120.0 + (y - 25.0) ** 2 / 40.0))
    return z


def face_template(rings: int = 24, n_landmarks: int = 68) -> FaceTemplate:
    """Elliptical disk-topology height field resembling a face.

    Vertices lie on concentric rings of an ellipse (semi-axes 50 x 62) and
    are triangulated by Delaunay triangulation of the planar parameter
    domain; 68 landmarks are picked on eye, brow, nose, mouth and jaw
    curves.
    """
    from scipy.spatial import Delaunay

    pts = [(0.0, 0.0)]
    for r in range(1, rings + 1):
        rho = r / rings
        count = 6 * r
        phase = 0.5 * (r % 2) * 2 * np.pi / count
        ang = phase + 2 * np.pi * np.arange(count) / count
        pts += list(zip(rho * np.cos(ang), rho * np.sin(ang)))
    uv = np.array(pts)
    tri = Delaunay(uv).simplices
    # ccw orientation in the parameter plane
    a, b, c = uv[tri[:, 0]], uv[tri[:, 1]], uv[tri[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    tri[cross < 0] = tri[cross < 0][:, [0, 2, 1]]
    x = 50.0 * uv[:, 0]
    y = 62.0 * uv[:, 1]
    verts = np.stack([x, y, _height(x, y)], axis=1)

    def nearest(px, py):
        return int(np.argmin((x - px) ** 2 + (y - py) ** 2))

    curves = []
    curves += [(-40 + 80 * s, -30 - 22 * np.sin(np.pi * s)) for s in np.linspace(0, 1, 17)]  # jaw
    curves += [(-30 + 20 * s, 30 + 4 * np.sin(np.pi * s)) for s in np.linspace(0, 1, 5)]  # brows
    curves += [(10 + 20 * s, 30 + 4 * np.sin(np.pi * s)) for s in np.linspace(0, 1, 5)]
    curves += [(0.0, 22 - 6 * k) for k in range(4)]  # nose bridge
    curves += [(-8 + 4 * k, -2.0) for k in range(5)]  # nostrils
    for cx in (-20.0, 20.0):  # eyes
        curves += [(cx + 7 * np.cos(t), 18 + 3 * np.sin(t)) for t in np.linspace(0, 2 * np.pi, 6, endpoint=False)]
    outer = [(16 * np.cos(t), -18 + 7 * np.sin(t)) for t in np.linspace(0, 2 * np.pi, 12, endpoint=False)]
    inner = [(10 * np.cos(t), -18 + 3 * np.sin(t)) for t in np.linspace(0, 2 * np.pi, 8, endpoint=False)]
    curves += outer + inner
    landmarks = []
    for px, py in curves:
        k = nearest(px, py)
        if k in landmarks:
            # step to the closest unused vertex
            order = np.argsort((x - px) ** 2 + (y - py) ** 2)
            k = int(next(i for i in order if i not in landmarks))
        landmarks.append(k)
    landmarks = np.array(landmarks[:n_landmarks])
    mouth = landmarks[48:68]
    upper = np.concatenate([landmarks[17:27], landmarks[36:48]])
    lower = mouth.copy()
    mesh = TriangleMesh(verts, tri, landmarks)
    return FaceTemplate(mesh, mouth, upper, lower)


def smooth_deformation(mesh: TriangleMesh, rng: np.random.Generator, amplitude: float = 0.03) -> TriangleMesh:
    """Random low-frequency sinusoidal displacement scaled to ``amplitude`` x bbox diagonal."""
    v = mesh.vertices
    lo, hi = v.min(0), v.max(0)
    u = (v - lo) / np.where(hi > lo, hi - lo, 1.0)
    diag = mesh.bbox_diagonal()
    disp = np.zeros_like(v)
    for _ in range(3):
        k = rng.uniform(0.5, 2.0, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        disp += np.sin(2 * np.pi * (u @ k) + phase[0])[:, None] * direction
    disp *= amplitude * diag / 3.0
    return mesh.with_vertices(v + disp)


# --------------------------------------------------------------------------
# bilinear model and landmark sequences


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    """Rotation about a uniformly random axis by an angle uniform in ``[0, max_angle]``."""
    from .morphable import _rodrigues

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return _rodrigues(axis * rng.uniform(0.0, max_angle))


def bilinear_model(
    seed: int = 0,
    nx: int = 10,
    ny: int = 10,
    k_id: int = 5,
    k_exp: int = 8,
    n_landmarks: int = 68,
):
    """Small random bilinear model on a lifted ``nx`` x ``ny`` grid.

    The mean shape is the lifted grid (about 100 units across); core
    entries are Gaussian with a 3 unit standard deviation.  Returns the
    model and the landmark vertex indices.
    """
    from .morphable import BilinearFaceModel

    rng = np.random.default_rng(seed)
    grid = grid_mesh(nx, ny, 100.0, 120.0)
    v = grid.vertices.copy()
    v[:, 0] -= 50.0
    v[:, 1] -= 60.0
    v[:, 2] = _height(v[:, 0], v[:, 1])
    core = rng.normal(scale=3.0, size=(3 * len(v), k_id, k_exp))
    model = BilinearFaceModel(core, v.reshape(-1), grid.faces)
    landmarks = np.sort(rng.choice(len(v), size=min(n_landmarks, len(v)), replace=False))
    return model, landmarks


def random_pose(rng: np.random.Generator, max_angle: float = 0.6):
    from .morphable import PoseSOP

    return PoseSOP(rng.uniform(1.5, 4.0), random_rotation(rng, max_angle), rng.uniform(100.0, 400.0, size=2))


def synthetic_sequence(model, landmarks, n_frames: int = 10, seed: int = 1, noise: float = 0.0):
    """Render landmark frames from known parameters.

    Returns ``(frames, w_id, poses, w_exps)``; ``w_id`` has unit norm and a
    positive sum, matching the gauge used by the fitter.
    """
    from .morphable import Landmarks2D, model_vertices, project_sop

    rng = np.random.default_rng(seed)
    w_id = np.abs(rng.normal(size=model.k_id)) + 0.2
    w_id /= np.linalg.norm(w_id)
    poses, w_exps, frames = [], [], []
    for _ in range(n_frames):
        pose = random_pose(rng)
        w_exp = model.exp_neutral + rng.normal(scale=0.3, size=model.k_exp)
        x = project_sop(pose, model_vertices(model, w_id, w_exp)[landmarks])
        if noise > 0:
            x = x + rng.normal(scale=noise, size=x.shape)
        poses.append(pose)
        w_exps.append(w_exp)
        frames.append(Landmarks2D(x, landmarks))
    return frames, w_id, poses, w_exps


# --------------------------------------------------------------------------
# toy reference bank


def _bump(vertices, centers, radius):
    d2 = np.min(((vertices[:, None, :2] - vertices[centers][None, :, :2]) ** 2).sum(-1), axis=1)
    return np.exp(-d2 / (2 * radius ** 2))


def expression_offsets(template: FaceTemplate) -> dict:
    """Per-vertex displacement of each non-calm bank expression on the template.

    Magnitudes stay below half the shortest template edge so that unit gain
    is inside the safe range of :func:`facemap.emotion.augment_emotion`.
    """
    v = template.mesh.vertices
    lm = template.mesh.landmark_indices
    brows = _bump(v, lm[17:27], 6.0)
    mouth = _bump(v, lm[48:68], 6.0)
    side = np.clip(v[:, 0] / 16.0, -1.0, 1.0)
    return {
        "eyebrows_up": brows[:, None] * np.array([0.0, 0.9, 0.15]),
        "eyebrows_down": brows[:, None] * np.array([0.0, -0.8, -0.1]),
        "grin": mouth[:, None] * np.stack([0.5 * side, 0.7 * np.abs(side), 0.15 * np.ones_like(side)], 1),
    }


def reference_bank(template: FaceTemplate, n_identities: int = 3, seed: int = 7):
    """Exemplars ``(identity, expression, mesh)`` for a few random identities.

    Each identity is a smooth deformation of the template placed by its own
    random similarity transform, so matching has to align.
    """
    rng = np.random.default_rng(seed)
    offsets = expression_offsets(template)
    records = []
    for k in range(n_identities):
        calm = smooth_deformation(template.mesh, rng, amplitude=0.02).vertices
        R = random_rotation(rng, 0.3)
        s = rng.uniform(0.9, 1.1)
        t = rng.normal(scale=5.0, size=3)
        ident = f"id{k:02d}"
        for name in ("calm",) + tuple(offsets):
            shape = calm if name == "calm" else calm + offsets[name]
            records.append((ident, name, template.mesh.with_vertices(s * shape @ R.T + t)))
    return records
