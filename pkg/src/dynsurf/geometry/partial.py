"""Single-view visibility filtering via an orthographic depth buffer."""

from __future__ import annotations

import numpy as np

from . import kernels
from .mesh import TriMesh
from .sampling import SurfaceSamples

# Camera convention: looking along +view_dir. The default looks from the
# upper front-right, 45 degrees below horizontal.
DEFAULT_VIEW_DIR = np.array([0.5, -0.5, -np.sqrt(0.5)])

DEPTH_RESOLUTION = 256


def partial_view_mask(mesh: TriMesh, points: np.ndarray, view_dir=None,
                      res: int = DEPTH_RESOLUTION, backend=None) -> np.ndarray:
    """Boolean visibility of each point from an orthographic camera.

    The depth buffer stores, per pixel, the nearest triangle's conservative
    depth (max over its vertices), so points on a front face are never
    occluded by their own triangle.
    """
    d = DEFAULT_VIEW_DIR if view_dir is None else np.asarray(view_dir, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("partial view: view_dir must be unit length")
    u, v, w = kernels.projection_basis(d)
    tri = mesh.vertices[mesh.faces]
    tri_uv = np.stack([tri @ u, tri @ v], axis=-1)   # [F,3,2]
    pts_uv = np.stack([points @ u, points @ v], axis=-1)
    lo = np.minimum(tri_uv.min(axis=(0, 1)), pts_uv.min(axis=0))
    hi = np.maximum(tri_uv.max(axis=(0, 1)), pts_uv.max(axis=0))
    span = float((hi - lo).max())
    if span <= 0:
        return np.ones(points.shape[0], dtype=bool)
    pad = 0.02 * span
    lo = lo - pad
    px_size = (span + 2 * pad) / res
    tri_px = (tri_uv - lo) / px_size
    tri_depth = (tri @ w).max(axis=1)
    buf = kernels.rasterize_depth(tri_px, tri_depth, res, backend=backend)
    pix = np.floor((pts_uv - lo) / px_size).astype(np.int64)
    np.clip(pix, 0, res - 1, out=pix)
    depth = points @ w
    bias = 1e-3 * span
    return depth <= buf[pix[:, 0], pix[:, 1]] + bias


def render_partial_view(mesh: TriMesh, samples: SurfaceSamples, view_dir=None,
                        res: int = DEPTH_RESOLUTION, backend=None) -> SurfaceSamples:
    """Keep the samples visible from the orthographic camera along view_dir."""
    mask = partial_view_mask(mesh, samples.points, view_dir, res, backend=backend)
    return samples.subset(mask)
