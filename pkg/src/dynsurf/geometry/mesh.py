"""Triangle meshes in normalized object units."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriMesh:
    """Vertices [V,3] float64, faces [F,3] int64. Treated as immutable."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices",
                           np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "faces",
                           np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same topology, new vertex positions."""
        if vertices.shape != self.vertices.shape:
            raise MeshError(f"vertex array shape {vertices.shape} != {self.vertices.shape}")
        return TriMesh(vertices, self.faces)


@dataclass(frozen=True)
class ScaleOffset:
    """x -> x * scale + offset, uniform scale."""

    scale: float
    offset: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.offset

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (points - self.offset) / self.scale

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and not np.any(self.offset)


def validate_mesh(mesh: TriMesh) -> None:
    """Index-range and degeneracy checks; raises MeshError."""
    if mesh.n_faces == 0:
        return
    if mesh.faces.min() < 0 or mesh.faces.max() >= mesh.n_vertices:
        raise MeshError("face indices out of vertex range")
    f = mesh.faces
    if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
        raise MeshError("degenerate face (repeated vertex index)")
    if not np.isfinite(mesh.vertices).all():
        raise MeshError("non-finite vertex coordinates")


def _directed_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    return e


def is_watertight(mesh: TriMesh) -> bool:
    """Closed 2-manifold: every directed edge appears exactly once and its
    reverse exactly once (consistent orientation included)."""
    if mesh.n_faces == 0:
        return False
    e = _directed_edges(mesh.faces)
    n = mesh.n_vertices
    key = e[:, 0] * n + e[:, 1]
    rkey = e[:, 1] * n + e[:, 0]
    uniq, counts = np.unique(key, return_counts=True)
    if np.any(counts != 1):
        return False
    # every edge must be paired with its reversal
    return bool(np.isin(rkey, uniq).all())


def require_watertight(mesh: TriMesh, what: str = "operation") -> None:
    if not is_watertight(mesh):
        raise MeshError(f"{what} requires a watertight mesh")


def face_normals(mesh: TriMesh, unit: bool = True) -> np.ndarray:
    tri = mesh.vertices[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    if unit:
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        n = n / np.maximum(norm, 1e-300)
    return n


def face_areas(mesh: TriMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_normals(mesh, unit=False), axis=1)


def signed_volume(mesh: TriMesh) -> float:
    """Divergence-theorem volume; positive for outward-oriented closed meshes."""
    tri = mesh.vertices[mesh.faces]
    return float(np.einsum("fi,fi->f", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def orient_outward(mesh: TriMesh) -> TriMesh:
    """Flip all faces if the closed mesh encloses negative signed volume."""
    if signed_volume(mesh) < 0:
        return TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def bounding_box(points: np.ndarray) -> tuple:
    return points.min(axis=0), points.max(axis=0)


def normalize_transform(points: np.ndarray) -> ScaleOffset:
    """Transform centering the bbox at the origin with longest edge 1."""
    lo, hi = bounding_box(points)
    extent = hi - lo
    longest = float(extent.max())
    if longest <= 0:
        raise MeshError("cannot normalize: bounding box has zero extent")
    scale = 1.0 / longest
    center = (lo + hi) / 2.0
    return ScaleOffset(scale=scale, offset=-center * scale)


def normalize_mesh(mesh: TriMesh) -> tuple:
    """Center the bbox at the origin and scale the longest edge to 1.

    Returns (mesh, transform); the transform maps original to normalized
    coordinates and can be inverted to undo.
    """
    t = normalize_transform(mesh.vertices)
    if t.scale == 1.0 and not np.any(t.offset):
        return mesh, ScaleOffset(1.0, np.zeros(3))
    return TriMesh(t.apply(mesh.vertices), mesh.faces), t
