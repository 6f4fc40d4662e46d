"""Surface sampling, correspondence transfer, and observation corruption."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .mesh import MeshError, TriMesh, face_areas, face_normals
from .occupancy import occupancy_query


@dataclass(frozen=True)
class SurfaceSamples:
    """Points on a mesh surface with their provenance.

    points[i] equals the barycentric combination of face face_index[i];
    normals are the (outward) unit normals of those faces.
    """

    points: np.ndarray      # [N,3]
    face_index: np.ndarray  # [N]
    barycentric: np.ndarray  # [N,3], rows sum to 1
    normals: np.ndarray     # [N,3]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def subset(self, mask_or_index) -> "SurfaceSamples":
        return SurfaceSamples(self.points[mask_or_index], self.face_index[mask_or_index],
                              self.barycentric[mask_or_index], self.normals[mask_or_index])


def sample_surface(mesh: TriMesh, n: int, seed: int) -> SurfaceSamples:
    """Area-proportional face choice, uniform barycentric placement."""
    if n < 1:
        raise ValueError(f"sample_surface: n must be >= 1, got {n}")
    if mesh.n_faces == 0:
        raise MeshError("sample_surface: empty mesh")
    areas = face_areas(mesh)
    total = areas.sum()
    if total <= 0:
        raise MeshError("sample_surface: zero total surface area")
    rng = np.random.default_rng(seed)
    fidx = rng.choice(mesh.n_faces, size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0  # fold the unit square onto the triangle
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    bary = np.stack([1.0 - u - v, u, v], axis=1)
    tri = mesh.vertices[mesh.faces[fidx]]
    points = np.einsum("nk,nkd->nd", bary, tri)
    normals = face_normals(mesh)[fidx]
    return SurfaceSamples(points, fidx.astype(np.int64), bary, normals)


def transfer_samples(target_mesh: TriMesh, face_index: np.ndarray,
                     barycentric: np.ndarray) -> np.ndarray:
    """Re-evaluate samples on a mesh with identical face topology.

    Row i of the result corresponds to row i of the source samples; this is
    the ground-truth dense correspondence between the two surfaces.
    """
    face_index = np.asarray(face_index, dtype=np.int64)
    if face_index.size and face_index.max() >= target_mesh.n_faces:
        raise MeshError("transfer_samples: face index beyond target topology")
    tri = target_mesh.vertices[target_mesh.faces[face_index]]
    return np.einsum("nk,nkd->nd", np.asarray(barycentric, dtype=np.float64), tri)


def near_surface_points(mesh: TriMesh, samples: SurfaceSamples, sigmas, seed: int,
                        compute_occupancy: bool = True) -> tuple:
    """Offset each sample along its normal by delta ~ N(0, sigma^2).

    Two noise scales; each point gets one of them, alternating by index.
    Returns (points, occupancy, deltas); the deltas let callers transport
    the same offsets onto a corresponding frame. occupancy is None when
    compute_occupancy is off.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if np.any(sigmas <= 0):
        raise ValueError("near_surface_points: sigmas must be > 0")
    rng = np.random.default_rng(seed)
    n = samples.n
    level = np.arange(n) % sigmas.size
    deltas = rng.standard_normal(n) * sigmas[level]
    points = samples.points + deltas[:, None] * samples.normals
    occ = occupancy_query(mesh, points) if compute_occupancy else None
    return points, occ, deltas


def add_observation_noise(points: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """I.i.d. Gaussian jitter per coordinate; sigma=0 is the identity."""
    if sigma < 0:
        raise ValueError("add_observation_noise: sigma must be >= 0")
    if sigma == 0:
        return points.copy()
    rng = np.random.default_rng(seed)
    return points + sigma * rng.standard_normal(points.shape)


def farthest_point_sample(points: np.ndarray, m: int, start: int = 0) -> np.ndarray:
    """Greedy max-min selection; ties go to the smallest index.

    Paired clouds must reuse the index sequence computed on the source cloud
    to preserve row correspondence.
    """
    return kernels.fps_indices(points, m, start)


def canonical_fps_start(points: np.ndarray) -> int:
    """Permutation-stable start: the point farthest from the centroid.

    Ties resolved toward the lexicographically smallest coordinate triple so
    the anchor does not depend on input row order.
    """
    pts = np.asarray(points, dtype=np.float64)
    d = ((pts - pts.mean(axis=0)) ** 2).sum(axis=1)
    best = np.flatnonzero(d == d.max())
    if best.size == 1:
        return int(best[0])
    rows = pts[best]
    order = np.lexsort((rows[:, 2], rows[:, 1], rows[:, 0]))
    return int(best[order[0]])
