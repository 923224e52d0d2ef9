"""Classical multidimensional scaling of a distance matrix into the plane."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import DegenerateEmbeddingError, MeshFormatError, ValidationError
from .geodesics import DistanceMatrix

# Above this size only the top eigenpairs are computed iteratively.
DENSE_LIMIT = 20000
# Second eigenvalue below this fraction of the first counts as zero.
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class PlanarEmbedding:
    """Two-dimensional classical-MDS configuration.

    Attributes
    ----------
    coords : (n, 2) ndarray
        Embedded coordinates, columns ordered by decreasing eigenvalue.
    eigenvalues : (2,) ndarray
        The retained eigenvalues of the double-centered matrix.
    strain : float
        Share of the positive spectrum's squared mass left out of the
        embedding (0 means exact recovery); NaN when unknown.
    """

    coords: np.ndarray
    eigenvalues: np.ndarray
    strain: float = float("nan")

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.float64, order="C")
        ev = np.array(self.eigenvalues, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 2:
            raise ValidationError(f"coords must have shape (n, 2), got {c.shape}")
        if ev.shape != (2,) or not (ev[0] >= ev[1] > 0):
            raise ValidationError(f"eigenvalues must be descending and positive, got {ev}")
        c.setflags(write=False)
        ev.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def n(self) -> int:
        return len(self.coords)

    def scaled(self, factor: float) -> "PlanarEmbedding":
        return PlanarEmbedding(self.coords * factor, self.eigenvalues * factor ** 2, self.strain)


def _values(D) -> np.ndarray:
    if isinstance(D, DistanceMatrix):
        return D.values
    return DistanceMatrix(D).values


def double_center(D) -> np.ndarray:
    """``B = -1/2 J D**2 J`` with ``J = I - 11^T / n``."""
    d = _values(D)
    n = len(d)
    if n < 3:
        raise ValidationError(f"need at least 3 points for a 2D embedding, got {n}")
    d2 = d * d
    row = d2.mean(axis=1)
    col = d2.mean(axis=0)
    B = -0.5 * (d2 - row[:, None] - col[None, :] + d2.mean())
    return 0.5 * (B + B.T)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip columns so vertex 0 (or the first clearly nonzero row) is nonnegative."""
    vecs = vecs.copy()
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        tol = 1e-12 * np.abs(col).max()
        nz = np.flatnonzero(np.abs(col) > tol)
        if len(nz) and col[nz[0]] < 0:
            vecs[:, k] = -col
    return vecs


def classical_mds_2d(D) -> PlanarEmbedding:
    """Embed a distance matrix in the plane by spectral truncation of ``B``.

    Coordinates are the top two eigenvectors scaled by the square roots of
    their eigenvalues, with the sign of each column fixed so that vertex 0
    is nonnegative.
    """
    B = double_center(D)
    n = len(B)
    if n <= DENSE_LIMIT:
        spectrum = scipy.linalg.eigvalsh(B)
        w, V = scipy.linalg.eigh(B, subset_by_index=[n - 2, n - 1])
        pos = spectrum[spectrum > 0]
        total = float(np.sum(pos ** 2))
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        v0[0] += 0.5  # not orthogonal to the top eigenvectors, unlike the constant vector
        w, V = scipy.sparse.linalg.eigsh(B, k=2, which="LA", v0=v0, tol=1e-12)
        # positive-spectrum mass is not available without a full solve; the Frobenius norm bounds it
        total = float(np.sum(B * B))
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    if not w[0] > 0 or w[1] <= RANK_TOL * w[0]:
        raise DegenerateEmbeddingError(
            f"fewer than 2 positive eigenvalues (top two: {w[0]:.3e}, {w[1]:.3e}); "
            "the configuration is at most 1-dimensional"
        )
    V = _fix_signs(V)
    coords = V * np.sqrt(w)[None, :]
    kept = float(np.sum(w ** 2))
    strain = max(total - kept, 0.0) / total if total > 0 else 0.0
    return PlanarEmbedding(coords, w, strain)


def embedding_strain(coords, D) -> float:
    """Squared Frobenius residual ``||B - X X^T||_F**2``."""
    X = np.asarray(coords, dtype=np.float64)
    B = double_center(D)
    if X.ndim != 2 or X.shape[0] != len(B):
        raise ValidationError(f"coords shape {X.shape} does not match {len(B)} points")
    R = B - X @ X.T
    return float(np.sum(R * R))


def save_embedding(emb: PlanarEmbedding, path) -> None:
    lines = [f"{emb.n} 2\n"] + [f"{a!r} {b!r}\n" for a, b in emb.coords.tolist()]
    with open(path, "w") as fh:
        fh.writelines(lines)


def load_embedding(path) -> PlanarEmbedding:
    """Read an ``.emb`` file; eigenvalues are recovered from the column norms."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[1] != "2":
            raise MeshFormatError("expected header 'n 2'", path, 1)
        n = int(header[0])
        rows = []
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            parts = line.split()
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except (ValueError, IndexError):
                raise MeshFormatError(f"bad embedding row {line.strip()!r}", path, lineno) from None
    if len(rows) != n:
        raise MeshFormatError(f"header says {n} rows, found {len(rows)}", path)
    coords = np.array(rows)
    ev = np.sum(coords ** 2, axis=0)
    if ev[1] > ev[0]:
        coords = coords[:, ::-1]
        ev = ev[::-1]
    return PlanarEmbedding(coords, ev)
