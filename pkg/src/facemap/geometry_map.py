"""Geometry maps: 3D vertex positions rasterized onto the template's planar embedding.

A :class:`TemplateAtlas` is built once from the template mesh and its 2D
MDS embedding.  Each pixel center covered by an embedded triangle records
that triangle and its barycentric coordinates, so :func:`encode` is a
per-pixel barycentric blend and :func:`decode` a mask-aware bilinear lookup
at every vertex's pixel position.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import kernels
from ._io import read_container, write_container
from .errors import AtlasError, MeshFormatError, ValidationError
from .mds import PlanarEmbedding
from .mesh import TriangleMesh

DEFAULT_RESOLUTION = 128
MAX_FOLDOVER_FRACTION = 0.10


def _single_component(mask: np.ndarray) -> bool:
    _, count = ndimage.label(mask)  # default structure is 4-connectivity
    return count == 1


@dataclass(frozen=True, eq=False)
class GeometryMap:
    """``H x W x 3`` grid of 3D coordinates with an explicit occupancy mask.

    ``uv`` holds each template vertex's continuous pixel position
    (x = column, y = row); it may be ``None`` for maps read from disk
    without an atlas.
    """

    grid: np.ndarray
    mask: np.ndarray
    uv: Optional[np.ndarray] = None

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float64, order="C")
        mask = np.array(self.mask, dtype=bool, order="C")
        if grid.ndim != 3 or grid.shape[2] != 3 or grid.shape[:2] != mask.shape:
            raise ValidationError(f"grid {grid.shape} and mask {mask.shape} are inconsistent")
        if not mask.any():
            raise ValidationError("geometry map mask is empty")
        if np.any(grid[~mask] != 0):
            raise ValidationError("grid values outside the mask must be zero")
        grid.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mask", mask)
        if self.uv is not None:
            uv = np.array(self.uv, dtype=np.float64)
            h, w = mask.shape
            if uv.ndim != 2 or uv.shape[1] != 2:
                raise ValidationError("uv must have shape (n, 2)")
            if uv.min(initial=0) < 0 or np.any(uv[:, 0] > w - 1) or np.any(uv[:, 1] > h - 1):
                raise ValidationError("uv coordinates fall outside the grid")
            uv.setflags(write=False)
            object.__setattr__(self, "uv", uv)

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def shape(self):
        return self.grid.shape


@dataclass(frozen=True, eq=False)
class TemplateAtlas:
    """Per-pixel (face, barycentric) lookup over the embedded template triangulation."""

    embedding: PlanarEmbedding
    uv: np.ndarray
    faces: np.ndarray
    face_index: np.ndarray
    barycentric: np.ndarray
    resolution: int
    margin_fraction: float = 0.02
    n_degenerate: int = 0
    n_foldover: int = 0
    landmark_indices: Optional[np.ndarray] = None

    @property
    def mask(self) -> np.ndarray:
        return self.face_index >= 0

    @property
    def n_vertices(self) -> int:
        return len(self.uv)

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())


def normalize_embedding(coords: np.ndarray, resolution: int, margin_fraction: float) -> np.ndarray:
    """Isotropic affine map of ``coords`` into ``[margin, res-1-margin]`` per axis, centered."""
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = float(np.max(hi - lo))
    if not span > 0:
        raise AtlasError("embedding has zero extent")
    margin = margin_fraction * (resolution - 1)
    scale = (resolution - 1 - 2 * margin) / span
    center = 0.5 * (lo + hi)
    uv = (coords - center) * scale + 0.5 * (resolution - 1)
    return np.clip(uv, 0.0, resolution - 1.0)


def build_atlas(
    embedding: PlanarEmbedding,
    mesh: TriangleMesh,
    resolution: int = DEFAULT_RESOLUTION,
    margin_fraction: float = 0.02,
) -> TemplateAtlas:
    """Rasterize the embedded triangulation of ``mesh`` onto a square pixel grid.

    Pixels covered by several triangles (fold-overs) keep the triangle whose
    barycentric point has the largest minimum weight.

    Raises
    ------
    AtlasError
        If more than 10% of the covered pixels are fold-overs, or the
        covered region is not a single 4-connected component.
    """
    if embedding.n != mesh.n_vertices:
        raise ValidationError(
            f"embedding has {embedding.n} points but mesh has {mesh.n_vertices} vertices"
        )
    if resolution < 2:
        raise ValidationError("resolution must be at least 2")
    if not 0 <= margin_fraction <= 0.2:
        raise ValidationError("margin_fraction must lie in [0, 0.2]")
    uv = normalize_embedding(embedding.coords, resolution, margin_fraction)
    face_index, bary, n_deg, n_multi = kernels.rasterize(
        np.ascontiguousarray(uv), np.ascontiguousarray(mesh.faces, dtype=np.int64), resolution, resolution
    )
    mask = face_index >= 0
    covered = int(mask.sum())
    if covered == 0:
        raise AtlasError("no pixel center falls inside the embedded triangulation")
    if n_multi > MAX_FOLDOVER_FRACTION * covered:
        raise AtlasError(
            f"fold-over on {n_multi} of {covered} pixels exceeds {MAX_FOLDOVER_FRACTION:.0%}"
        )
    if not _single_component(mask):
        raise AtlasError("atlas mask is not a single 4-connected region")
    bary = np.maximum(bary, 0.0)
    s = bary.sum(axis=2, keepdims=True)
    bary = np.where(mask[..., None], bary / np.where(s > 0, s, 1.0), 0.0)
    return TemplateAtlas(
        embedding=embedding,
        uv=uv,
        faces=np.array(mesh.faces),
        face_index=face_index,
        barycentric=bary,
        resolution=resolution,
        margin_fraction=margin_fraction,
        n_degenerate=n_deg,
        n_foldover=n_multi,
        landmark_indices=None if mesh.landmark_indices is None else np.array(mesh.landmark_indices),
    )


def encode(mesh: TriangleMesh, atlas: TemplateAtlas) -> GeometryMap:
    """Store barycentrically interpolated vertex positions at every masked pixel."""
    if mesh.n_vertices != atlas.n_vertices:
        raise ValidationError(
            f"mesh has {mesh.n_vertices} vertices, atlas expects {atlas.n_vertices}"
        )
    if mesh.faces.shape != atlas.faces.shape or not np.array_equal(mesh.faces, atlas.faces):
        raise ValidationError("mesh connectivity differs from the atlas template")
    mask = atlas.mask
    tri = atlas.faces[atlas.face_index[mask]]
    b = atlas.barycentric[mask]
    v = mesh.vertices
    grid = np.zeros((atlas.resolution, atlas.resolution, 3))
    grid[mask] = b[:, 0:1] * v[tri[:, 0]] + b[:, 1:2] * v[tri[:, 1]] + b[:, 2:3] * v[tri[:, 2]]
    return GeometryMap(grid, mask, atlas.uv)


def decode(gmap: GeometryMap, atlas: TemplateAtlas) -> TriangleMesh:
    """Sample the map at every template vertex with mask-aware bilinear weights.

    Unmasked taps get zero weight and the rest are renormalized; a vertex
    whose four taps are all unmasked takes the nearest masked pixel.  The
    result may be degenerate (e.g. a constant map), so it is not validated.
    """
    if gmap.grid.shape[:2] != (atlas.resolution, atlas.resolution):
        raise ValidationError(
            f"map is {gmap.grid.shape[:2]}, atlas resolution is {atlas.resolution}"
        )
    mask = np.ascontiguousarray(gmap.mask, dtype=np.uint8)
    out, missing = kernels.bilinear_masked(gmap.grid, mask, np.ascontiguousarray(atlas.uv))
    if missing.any():
        rows, cols = np.nonzero(gmap.mask)
        tree = cKDTree(np.stack([cols, rows], axis=1).astype(np.float64))
        _, nearest = tree.query(atlas.uv[missing])
        out[missing] = gmap.grid[rows[nearest], cols[nearest]]
    return TriangleMesh(out, atlas.faces, atlas.landmark_indices, check=False)


# ---------------------------------------------------------------------------
# persistence


def save_gmap(gmap: GeometryMap, path) -> None:
    """``<u32 H><u32 W>``, float64 grid row-major, then ``H*W`` mask bytes."""
    h, w = gmap.mask.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", h, w))
        fh.write(gmap.grid.astype("<f8").tobytes())
        fh.write(gmap.mask.astype(np.uint8).tobytes())


def load_gmap(path, atlas: Optional[TemplateAtlas] = None) -> GeometryMap:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise MeshFormatError("truncated .gmap header", path)
    h, w = struct.unpack_from("<II", raw)
    need = 8 + 8 * h * w * 3 + h * w
    if len(raw) != need:
        raise MeshFormatError(f".gmap size {len(raw)} does not match {h}x{w}", path)
    grid = np.frombuffer(raw, "<f8", h * w * 3, 8).reshape(h, w, 3)
    mask = np.frombuffer(raw, np.uint8, h * w, 8 + 8 * h * w * 3).reshape(h, w).astype(bool)
    return GeometryMap(grid, mask, None if atlas is None else atlas.uv)


def save_atlas(atlas: TemplateAtlas, path) -> None:
    meta = {
        "resolution": atlas.resolution,
        "margin_fraction": atlas.margin_fraction,
        "n_degenerate": atlas.n_degenerate,
        "n_foldover": atlas.n_foldover,
        "strain": atlas.embedding.strain,
    }
    arrays = {
        "coords": atlas.embedding.coords,
        "eigenvalues": atlas.embedding.eigenvalues,
        "uv": atlas.uv,
        "faces": atlas.faces.astype(np.int64),
        "face_index": atlas.face_index.astype(np.int64),
        "barycentric": atlas.barycentric,
    }
    if atlas.landmark_indices is not None:
        arrays["landmarks"] = np.asarray(atlas.landmark_indices, dtype=np.int64)
    write_container(path, meta, arrays)


def load_atlas(path) -> TemplateAtlas:
    meta, arrays = read_container(path)
    try:
        emb = PlanarEmbedding(arrays["coords"], arrays["eigenvalues"], meta.get("strain", float("nan")))
        return TemplateAtlas(
            embedding=emb,
            uv=arrays["uv"],
            faces=arrays["faces"],
            face_index=arrays["face_index"],
            barycentric=arrays["barycentric"],
            resolution=int(meta["resolution"]),
            margin_fraction=float(meta["margin_fraction"]),
            n_degenerate=int(meta["n_degenerate"]),
            n_foldover=int(meta["n_foldover"]),
            landmark_indices=arrays.get("landmarks"),
        )
    except KeyError as exc:
        raise MeshFormatError(f"atlas file lacks {exc}", Path(path)) from None


# ---------------------------------------------------------------------------
# PNG visualization


def png_sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def export_png(gmap: GeometryMap, path) -> None:
    """8-bit RGB image, each channel min-max normalized over the mask; JSON sidecar keeps the bounds.

    A channel that is constant over the mask is written at mid-scale (128).
    """
    from PIL import Image

    mask = gmap.mask
    vals = gmap.grid[mask]
    lo = vals.min(axis=0)
    hi = vals.max(axis=0)
    span = hi - lo
    norm = np.where(span > 0, (vals - lo) / np.where(span > 0, span, 1.0), 128.0 / 255.0)
    img = np.zeros(mask.shape + (3,), dtype=np.uint8)
    img[mask] = np.clip(np.rint(norm * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path, format="PNG")
    with open(png_sidecar_path(path), "w") as fh:
        json.dump({"min": lo.tolist(), "max": hi.tolist()}, fh)


def import_png(path, mask: np.ndarray) -> np.ndarray:
    """Dequantize a PNG written by :func:`export_png` back to an ``H x W x 3`` grid."""
    from PIL import Image

    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    with open(png_sidecar_path(path)) as fh:
        bounds = json.load(fh)
    lo, hi = np.array(bounds["min"]), np.array(bounds["max"])
    grid = lo + img * (hi - lo)
    grid[~np.asarray(mask, dtype=bool)] = 0.0
    return grid
