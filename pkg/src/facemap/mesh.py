"""Triangle meshes, frame sequences and emotion labels, plus OBJ/PLY I/O."""

from __future__ import annotations

import enum
import os
from dataclasses import InitVar, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import MeshFormatError, ValidationError

MIN_FACE_AREA = 1e-12
TEMPLATE_RESOLUTION = 12483


class EmotionLabel(str, enum.Enum):
    NEUTRAL = "neutral"
    HAPPY = "happy"
    ANGRY = "angry"
    SURPRISE = "surprise"

    @classmethod
    def parse(cls, value) -> "EmotionLabel":
        """Accept enum members, names and values; ``calm`` is read as ``neutral``."""
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        if key == "calm":
            return cls.NEUTRAL
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(
                f"unknown emotion {value!r}; expected one of {[e.value for e in cls]}"
            ) from None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, order="C", copy=True)
    a.setflags(write=False)
    return a


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area of every triangle."""
    if len(faces) == 0:
        return np.zeros(0)
    v0 = vertices[faces[:, 0]]
    e1 = vertices[faces[:, 1]] - v0
    e2 = vertices[faces[:, 2]] - v0
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Immutable triangle mesh with optional landmark vertex indices.

    Parameters
    ----------
    vertices : (n, 3) array_like
        Vertex positions in model units.
    faces : (m, 3) array_like of int
        Zero-based vertex indices per triangle.
    landmark_indices : sequence of int, optional
        Ordered vertex indices of detectable landmarks.
    check : bool
        Validate invariants on construction. Pass ``False`` only for raw
        model output that may be degenerate; see :attr:`degenerate`.
    """

    vertices: np.ndarray
    faces: np.ndarray
    landmark_indices: Optional[np.ndarray] = None
    check: InitVar[bool] = True

    def __post_init__(self, check):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim == 1 and v.size == 0:
            v = v.reshape(0, 3)
        f = np.asarray(self.faces)
        if f.size == 0:
            f = np.zeros((0, 3), dtype=np.int64)
        f = f.astype(np.int64, copy=False)
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "faces", _readonly(f))
        if self.landmark_indices is not None:
            lm = np.asarray(self.landmark_indices, dtype=np.int64).reshape(-1)
            object.__setattr__(self, "landmark_indices", _readonly(lm))
        if check:
            self.validate()

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def validate(self) -> None:
        """Raise :class:`ValidationError` naming the first offending face or index."""
        v, f = self.vertices, self.faces
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError(f"vertices must have shape (n, 3), got {v.shape}")
        if len(v) == 0:
            raise ValidationError("mesh has no vertices")
        if not np.all(np.isfinite(v)):
            raise ValidationError("vertex coordinates must be finite")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValidationError(f"faces must have shape (m, 3), got {f.shape}")
        n = len(v)
        if len(f):
            out_of_range = np.any((f < 0) | (f >= n), axis=1)
            repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            safe = np.where(out_of_range[:, None], 0, f)
            small = face_areas(v, safe) <= MIN_FACE_AREA
            bad = out_of_range | repeated | small
            if bad.any():
                i = int(np.argmax(bad))
                if out_of_range[i]:
                    why = f"index out of range [0, {n})"
                elif repeated[i]:
                    why = "repeated vertex index"
                else:
                    why = f"area <= {MIN_FACE_AREA:g}"
                raise ValidationError(f"face {i} {f[i].tolist()}: {why}")
        lm = self.landmark_indices
        if lm is not None:
            if np.any((lm < 0) | (lm >= n)):
                k = int(np.argmax((lm < 0) | (lm >= n)))
                raise ValidationError(f"landmark {k} has index {lm[k]} out of range [0, {n})")
            if len(np.unique(lm)) != len(lm):
                raise ValidationError("landmark indices contain duplicates")

    @property
    def degenerate(self) -> bool:
        """True when some face has (near) zero area."""
        return bool(len(self.faces)) and bool(
            np.any(face_areas(self.vertices, self.faces) <= MIN_FACE_AREA)
        )

    def face_areas(self) -> np.ndarray:
        return face_areas(self.vertices, self.faces)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) pairs with i < j."""
        return unique_edges(self.faces)

    def mean_edge_length(self) -> float:
        e = self.edges()
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def nonmanifold_edges(self) -> np.ndarray:
        """Edges shared by more than two faces."""
        he = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(he, axis=0, return_counts=True)
        return uniq[counts > 2]

    @property
    def is_edge_manifold(self) -> bool:
        return len(self.nonmanifold_edges()) == 0

    def with_vertices(self, vertices, check: bool = True) -> "TriangleMesh":
        """Same connectivity and landmarks, new positions."""
        return TriangleMesh(vertices, self.faces, self.landmark_indices, check=check)


def unique_edges(faces: np.ndarray) -> np.ndarray:
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    he = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    return np.unique(he, axis=0)


def vertex_adjacency(mesh: TriangleMesh) -> list[np.ndarray]:
    """Per-vertex neighbor lists, each sorted ascending."""
    e = mesh.edges()
    n = mesh.n_vertices
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    bounds = np.searchsorted(src, np.arange(n + 1))
    return [dst[bounds[i]:bounds[i + 1]] for i in range(n)]


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Animated mesh sequence with shared connectivity."""

    frames: tuple
    fps: float = 60.0

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not self.fps > 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        if not frames:
            raise ValidationError("frame sequence is empty")
        f0 = frames[0]
        for k, fr in enumerate(frames[1:], start=1):
            if fr.n_vertices != f0.n_vertices or fr.faces.shape != f0.faces.shape or not np.array_equal(
                fr.faces, f0.faces
            ):
                raise ValidationError(f"frame {k} connectivity differs from frame 0")

    @classmethod
    def from_array(cls, positions, faces, fps: float = 60.0, check: bool = True) -> "FrameSequence":
        """Build from a (frames, n, 3) array."""
        positions = np.asarray(positions, dtype=np.float64)
        return cls(tuple(TriangleMesh(p, faces, check=check) for p in positions), fps)

    def __len__(self):
        return len(self.frames)

    @property
    def duration(self) -> float:
        return len(self.frames) / self.fps

    def positions(self) -> np.ndarray:
        """Stacked (frames, n, 3) vertex positions."""
        return np.stack([f.vertices for f in self.frames])


# ---------------------------------------------------------------------------
# file I/O

def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = Path(path).suffix.lower().lstrip(".")
    if fmt not in ("obj", "ply"):
        raise ValidationError(f"unsupported mesh format {fmt!r} (expected obj or ply)")
    return fmt


def landmark_sidecar_path(path) -> Path:
    return Path(path).with_suffix(".lmk")


def read_landmarks(path) -> np.ndarray:
    path = Path(path)
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                out.append(int(s))
            except ValueError:
                raise MeshFormatError(f"bad landmark index {s!r}", path, lineno) from None
    return np.asarray(out, dtype=np.int64)


def write_landmarks(indices, path) -> None:
    with open(path, "w") as fh:
        for i in np.asarray(indices, dtype=np.int64):
            fh.write(f"{int(i)}\n")


def load_mesh(path, format: Optional[str] = None) -> TriangleMesh:
    """Read an OBJ or binary PLY mesh; a ``.lmk`` sidecar, if present, supplies landmarks."""
    fmt = _infer_format(path, format)
    path = Path(path)
    if fmt == "obj":
        vertices, faces = _read_obj(path)
    else:
        vertices, faces = _read_ply(path)
    lmk = landmark_sidecar_path(path)
    landmarks = read_landmarks(lmk) if lmk.exists() else None
    return TriangleMesh(vertices, faces, landmarks)


def save_mesh(mesh: TriangleMesh, path, format: Optional[str] = None) -> None:
    """Write ``mesh``; landmarks go to a ``.lmk`` sidecar next to it."""
    fmt = _infer_format(path, format)
    mesh.validate()
    path = Path(path)
    if fmt == "obj":
        _write_obj(mesh, path)
    else:
        _write_ply(mesh, path)
    if mesh.landmark_indices is not None:
        write_landmarks(mesh.landmark_indices, landmark_sidecar_path(path))


def _read_obj(path: Path):
    verts = []
    faces = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError("vertex record needs 3 coordinates", path, lineno)
                try:
                    verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError:
                    raise MeshFormatError(f"bad vertex record {line.strip()!r}", path, lineno) from None
            elif tag == "f":
                if len(parts) != 4:
                    raise MeshFormatError(
                        f"only triangles are supported, got {len(parts) - 1} indices", path, lineno
                    )
                tri = []
                for tok in parts[1:]:
                    try:
                        k = int(tok.split("/")[0])
                    except ValueError:
                        raise MeshFormatError(f"bad face index {tok!r}", path, lineno) from None
                    if k > 0:
                        tri.append(k - 1)
                    elif k < 0:
                        tri.append(len(verts) + k)
                    else:
                        # index 0 is illegal in OBJ; keep it out of range so validation names it
                        tri.append(-1)
                faces.append(tri)
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _write_obj(mesh: TriangleMesh, path: Path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}\n" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.faces.tolist()]
    with open(path, "w") as fh:
        fh.writelines(lines)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(path: Path):
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshFormatError("missing ply header", path, 1)
    nl = data.find(b"\n", end)
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[nl + 1:]
    elements = []
    for lineno, line in enumerate(header, 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "binary_little_endian":
                raise MeshFormatError(f"unsupported ply format {line.strip()!r}", path, lineno)
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError("property before element", path, lineno)
            try:
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], "list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            except (KeyError, IndexError):
                raise MeshFormatError(f"bad property line {line.strip()!r}", path, lineno) from None
    offset = 0
    vertices = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    for name, count, props in elements:
        if any(len(p) == 4 for p in props):
            if len(props) != 1:
                raise MeshFormatError(f"element {name}: mixed list properties unsupported", path)
            _, _, ctype, itype = props[0]
            cdt, idt = np.dtype("<" + ctype), np.dtype("<" + itype)
            rows = []
            for k in range(count):
                if offset + cdt.itemsize > len(body):
                    raise MeshFormatError(f"truncated {name} element {k}", path)
                c = int(np.frombuffer(body, cdt, 1, offset)[0])
                offset += cdt.itemsize
                if offset + c * idt.itemsize > len(body):
                    raise MeshFormatError(f"truncated {name} element {k}", path)
                rows.append(np.frombuffer(body, idt, c, offset).astype(np.int64))
                offset += c * idt.itemsize
            if name == "face":
                if any(len(r) != 3 for r in rows):
                    raise MeshFormatError("only triangles are supported", path)
                faces = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
        else:
            dt = np.dtype([(p[0], "<" + p[1]) for p in props])
            if offset + count * dt.itemsize > len(body):
                raise MeshFormatError(f"truncated {name} element data", path)
            arr = np.frombuffer(body, dt, count, offset)
            offset += count * dt.itemsize
            if name == "vertex":
                try:
                    vertices = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
                except ValueError:
                    raise MeshFormatError("vertex element lacks x/y/z", path) from None
    return vertices, faces


def _write_ply(mesh: TriangleMesh, path: Path) -> None:
    n, m = mesh.n_vertices, mesh.n_faces
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\nproperty double x\nproperty double y\nproperty double z\n"
        f"element face {m}\nproperty list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    fdt = np.dtype([("c", "u1"), ("i", "<i4", (3,))])
    frec = np.empty(m, dtype=fdt)
    frec["c"] = 3
    frec["i"] = mesh.faces
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(mesh.vertices.astype("<f8").tobytes())
        fh.write(frec.tobytes())


def load_sequence(paths: Sequence[os.PathLike], fps: float = 60.0) -> FrameSequence:
    return FrameSequence(tuple(load_mesh(p) for p in paths), fps)
