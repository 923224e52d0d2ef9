"""Heat-method geodesic distances on triangle meshes.

Distances follow the three-step heat method: diffuse a delta for a short
time ``t``, normalize the negated heat gradient per face, then recover a
distance field from its divergence with a Poisson solve.  Both linear
systems are factored once per mesh and reused for every source.
"""

from __future__ import annotations

import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import MeshFormatError, NumericalError, TopologyError, ValidationError
from .mesh import TriangleMesh

# Fixed batch size keeps results bit-identical for any worker count.
SOURCE_CHUNK = 64


def cotangents(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Cotangent of each corner angle; column ``k`` is the angle at ``faces[:, k]``."""
    p = vertices[faces]
    cots = np.empty((len(faces), 3))
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cots[:, k] = np.einsum("ij,ij->i", a, b) / np.linalg.norm(np.cross(a, b), axis=1)
    return cots


def cotangent_laplacian(mesh: TriangleMesh, clamp_negative: bool = True) -> sp.csr_matrix:
    """Positive semi-definite cotangent stiffness matrix ``L``.

    Off-diagonal entries are ``-(cot a + cot b) / 2`` for the two angles
    opposite each edge. Negative edge weights are clamped to zero (with a
    warning) unless ``clamp_negative`` is false.
    """
    f = mesh.faces
    n = mesh.n_vertices
    cots = cotangents(mesh.vertices, f)
    # edge (k+1, k+2) is opposite corner k
    i = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = 0.5 * np.concatenate([cots[:, 0], cots[:, 1], cots[:, 2]])
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    W = sp.coo_matrix((w, (lo, hi)), shape=(n, n)).tocsr()
    W.sum_duplicates()
    if clamp_negative:
        neg = W.data < 0
        if neg.any():
            warnings.warn(
                f"clamped {int(neg.sum())} negative cotangent edge weights to zero",
                RuntimeWarning,
                stacklevel=2,
            )
            W.data[neg] = 0.0
    W = W + W.T
    deg = np.asarray(W.sum(axis=1)).ravel()
    L = sp.diags(deg) - W
    return L.tocsr()


def lumped_mass(mesh: TriangleMesh) -> np.ndarray:
    """Barycentric lumped mass: one third of each incident face area."""
    areas = mesh.face_areas()
    return np.bincount(mesh.faces.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=mesh.n_vertices)


def _check_topology(mesh: TriangleMesh) -> None:
    bad = mesh.nonmanifold_edges()
    if len(bad):
        a, b = bad[0]
        raise TopologyError(f"non-manifold edge ({a}, {b}) shared by more than two faces")
    e = mesh.edges()
    n = mesh.n_vertices
    g = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    ncomp, _ = connected_components(g, directed=False)
    if ncomp != 1:
        raise TopologyError(f"mesh is disconnected: {ncomp} connected components")


@dataclass(frozen=True, eq=False)
class HeatSolverContext:
    """Prefactored heat-method operators for one mesh. Immutable and thread-safe to share."""

    laplacian: sp.csr_matrix
    mass: np.ndarray
    t: float
    n_vertices: int
    gradient: sp.csr_matrix
    divergence: sp.csr_matrix
    _heat_lu: object
    _poisson_lu: object

    def heat(self, rhs: np.ndarray) -> np.ndarray:
        return self._heat_lu.solve(rhs)

    def poisson(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``L phi = rhs`` for ``rhs`` orthogonal to constants, pinning ``phi[0] = 0``."""
        rhs = rhs - rhs.mean(axis=0)
        out = np.zeros_like(rhs)
        out[1:] = self._poisson_lu.solve(np.ascontiguousarray(rhs[1:]))
        return out


def _gradient_divergence(mesh: TriangleMesh):
    v, f = mesh.vertices, mesh.faces
    m, n = len(f), len(v)
    p = v[f]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    double_area = np.linalg.norm(normal, axis=1)
    normal = normal / double_area[:, None]
    cots = cotangents(v, f)

    rows, cols, gvals = [], [], []
    drows, dcols, dvals = [], [], []
    for k in range(3):
        # gradient of the hat function of corner k: N x (opposite edge, ccw) / 2A
        opp = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        g = np.cross(normal, opp) / double_area[:, None]
        # divergence coefficients at corner k: 1/2 (cot_b e_a + cot_a e_b)
        ea = p[:, (k + 1) % 3] - p[:, k]
        eb = p[:, (k + 2) % 3] - p[:, k]
        dc = 0.5 * (cots[:, (k + 2) % 3, None] * ea + cots[:, (k + 1) % 3, None] * eb)
        for c in range(3):
            rows.append(3 * np.arange(m) + c)
            cols.append(f[:, k])
            gvals.append(g[:, c])
            drows.append(f[:, k])
            dcols.append(3 * np.arange(m) + c)
            dvals.append(dc[:, c])
    G = sp.coo_matrix(
        (np.concatenate(gvals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * m, n)
    ).tocsr()
    D = sp.coo_matrix(
        (np.concatenate(dvals), (np.concatenate(drows), np.concatenate(dcols))), shape=(n, 3 * m)
    ).tocsr()
    return G, D


def build_heat_context(mesh: TriangleMesh, t_multiplier: float = 1.0) -> HeatSolverContext:
    """Assemble and factor the heat-method systems for ``mesh``.

    The diffusion time is ``t = t_multiplier * h**2`` with ``h`` the mean
    edge length.
    """
    if not t_multiplier > 0:
        raise ValidationError(f"t_multiplier must be positive, got {t_multiplier}")
    mesh.validate()
    _check_topology(mesh)
    L = cotangent_laplacian(mesh)
    M = lumped_mass(mesh)
    if np.any(M <= 0):
        raise ValidationError("mesh has vertices not referenced by any face")
    t = t_multiplier * mesh.mean_edge_length() ** 2
    G, D = _gradient_divergence(mesh)
    A = (sp.diags(M) + t * L).tocsc()
    P = L[1:, 1:].tocsc()
    try:
        heat_lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        poisson_lu = spla.splu(P, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise NumericalError(f"heat-method factorization failed: {exc}") from exc
    return HeatSolverContext(L, M, float(t), mesh.n_vertices, G, D, heat_lu, poisson_lu)


def _distance_fields(ctx: HeatSolverContext, sources: list) -> np.ndarray:
    """One distance column per entry of ``sources`` (each an index array)."""
    n, k = ctx.n_vertices, len(sources)
    delta = np.zeros((n, k))
    for c, s in enumerate(sources):
        delta[s, c] = 1.0
    u = ctx.heat(delta)
    grad = (ctx.gradient @ u).reshape(-1, 3, k)
    norm = np.sqrt(np.einsum("fck,fck->fk", grad, grad))
    safe = np.where(norm > 0, norm, 1.0)
    X = -grad / safe[:, None, :]
    X[np.broadcast_to((norm == 0)[:, None, :], X.shape)] = 0.0
    div = ctx.divergence @ X.reshape(-1, k)
    phi = ctx.poisson(-div)
    if not np.all(np.isfinite(phi)):
        raise NumericalError("heat-method solve produced non-finite values")
    out = np.empty_like(phi)
    for c, s in enumerate(sources):
        d = phi[:, c] - phi[s, c].min()
        np.maximum(d, 0.0, out=d)
        d[s] = 0.0
        out[:, c] = d
    return out


def geodesic_from_source(ctx: HeatSolverContext, mesh: TriangleMesh, source) -> np.ndarray:
    """Approximate geodesic distance from ``source`` to every vertex.

    ``source`` may be one vertex index or a collection of indices, in which
    case the result is the distance to the nearest of them.
    """
    if mesh.n_vertices != ctx.n_vertices:
        raise ValidationError("mesh does not match the heat context")
    src = np.atleast_1d(np.asarray(source, dtype=np.int64))
    if src.size == 0:
        raise ValidationError("source set is empty")
    if np.any((src < 0) | (src >= ctx.n_vertices)):
        raise ValidationError(f"source index out of range [0, {ctx.n_vertices})")
    return _distance_fields(ctx, [src])[:, 0]


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric n x n matrix of nonnegative distances with zero diagonal."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, order="C")
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"distance matrix must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValidationError("distances must be finite and nonnegative")
        if np.any(np.diag(v) != 0):
            raise ValidationError("distance matrix diagonal must be exactly zero")
        scale = max(float(np.abs(v).max()), 1e-300)
        if np.abs(v - v.T).max() > 1e-9 * scale:
            raise ValidationError("distance matrix is not symmetric")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return len(self.values)


def all_pairs_geodesics(ctx: HeatSolverContext, mesh: TriangleMesh, threads: int = 1) -> DistanceMatrix:
    """Every vertex-to-vertex geodesic distance, symmetrized as ``(D + D.T) / 2``.

    Sources are solved in fixed-size batches spread over ``threads``
    workers; the result does not depend on the worker count.
    """
    if mesh.n_vertices != ctx.n_vertices:
        raise ValidationError("mesh does not match the heat context")
    n = ctx.n_vertices
    D = np.empty((n, n))
    starts = list(range(0, n, SOURCE_CHUNK))

    def run(start):
        stop = min(start + SOURCE_CHUNK, n)
        cols = _distance_fields(ctx, [np.array([s]) for s in range(start, stop)])
        D[start:stop] = cols.T

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D)


def save_dmat(D, path) -> None:
    """Write ``<u64 n><n*n float64>`` little-endian."""
    values = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)
    n = len(values)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", n))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def load_dmat(path) -> DistanceMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise MeshFormatError("truncated .dmat header", path)
    (n,) = struct.unpack_from("<Q", raw)
    if len(raw) != 8 + 8 * n * n:
        raise MeshFormatError(f".dmat payload size does not match n={n}", path)
    return DistanceMatrix(np.frombuffer(raw, "<f8", n * n, 8).reshape(n, n))

