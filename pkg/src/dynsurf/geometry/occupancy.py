"""Inside/outside classification for watertight meshes."""

from __future__ import annotations

import numpy as np

from . import kernels
from .mesh import TriMesh, require_watertight

# Three fixed pseudo-random ray directions; parity is taken per direction
# and combined by majority vote, which tolerates single-ray edge grazing.
RAY_DIRECTIONS = np.array([
    [0.24399359, 0.28113970, -0.92813124],
    [-0.66927124, 0.68642803, -0.28441617],
    [-0.46465799, 0.05721550, -0.88363982],
])
RAY_DIRECTIONS /= np.linalg.norm(RAY_DIRECTIONS, axis=1, keepdims=True)


def occupancy_query(mesh: TriMesh, queries: np.ndarray, backend=None,
                    validate: bool = True) -> np.ndarray:
    """1 for inside, 0 for outside, via ray-crossing parity.

    Pass validate=False to skip the watertightness check when the caller has
    already established it (repeated queries against the same mesh).
    """
    if validate:
        require_watertight(mesh, "occupancy query")
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    votes = np.zeros(queries.shape[0], dtype=np.int64)
    for d in RAY_DIRECTIONS:
        counts = kernels.count_ray_crossings(mesh.vertices, mesh.faces, queries, d,
                                             backend=backend)
        votes += counts & 1
    return (votes >= 2).astype(np.int64)
