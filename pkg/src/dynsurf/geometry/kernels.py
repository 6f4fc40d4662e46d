"""Backend dispatch and shared preprocessing for the geometry kernels.

The jitted path (``_kernels_nb``) is used when numba is enabled via the
DYNSURF_NUMBA flag; the vectorized numpy path (``_kernels_np``) is always
available. Callers may force a backend explicitly, which the benchmark uses
to compare the two.
"""

from __future__ import annotations

import numpy as np

from .._accel import USE_NUMBA
from . import _kernels_np

if USE_NUMBA:
    from . import _kernels_nb
else:
    _kernels_nb = None


def _select(backend):
    if backend is None:
        return _kernels_nb if USE_NUMBA else _kernels_np
    if backend == "numpy":
        return _kernels_np
    if backend == "numba":
        if _kernels_nb is None:
            raise RuntimeError("numba backend requested but numba is disabled or unavailable")
        return _kernels_nb
    raise ValueError(f"unknown backend {backend!r}")


def available_backends() -> list:
    return ["numba", "numpy"] if _kernels_nb is not None else ["numpy"]


def fps_indices(points: np.ndarray, m: int, start: int = 0, backend=None) -> np.ndarray:
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"farthest point sampling: need 1 <= m <= {n}, got m={m}")
    if not 0 <= start < n:
        raise ValueError(f"farthest point sampling: start index {start} out of range")
    return _select(backend).fps_indices(points, m, start)


def projection_basis(direction: np.ndarray) -> tuple:
    """Right-handed orthonormal (u, v, d) with d the given unit direction."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(d)))] = 1.0
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    return u, v, d


def _face_planes(vertices, faces, direction):
    tri = vertices[faces]  # [F,3,3]
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    pd = np.einsum("fi,fi->f", nrm, tri[:, 0])
    denom = nrm @ direction
    return tri, nrm, pd, denom


def _build_face_grid_2d(tri2, gdim):
    """CSR cell -> face lists over the 2D bbox of the projected triangles."""
    gx_n, gy_n = gdim
    lo = tri2.min(axis=(0, 1))
    hi = tri2.max(axis=(0, 1))
    span = np.maximum(hi - lo, 1e-12)
    lo = lo - 1e-9 * span
    cw = span * (1 + 2e-9) / np.array([gx_n, gy_n])
    fmin = np.floor((tri2.min(axis=1) - lo) / cw).astype(np.int64)
    fmax = np.floor((tri2.max(axis=1) - lo) / cw).astype(np.int64)
    np.clip(fmin, 0, [gx_n - 1, gy_n - 1], out=fmin)
    np.clip(fmax, 0, [gx_n - 1, gy_n - 1], out=fmax)
    counts = np.zeros(gx_n * gy_n + 1, dtype=np.int64)
    spans = []
    for f in range(tri2.shape[0]):
        x0, y0 = fmin[f]
        x1, y1 = fmax[f]
        spans.append((x0, x1, y0, y1))
        for x in range(x0, x1 + 1):
            counts[x * gy_n + y0 + 1:x * gy_n + y1 + 2] += 1
    cell_start = np.cumsum(counts)
    cell_faces = np.empty(cell_start[-1], dtype=np.int64)
    cursor = cell_start[:-1].copy()
    for f, (x0, x1, y0, y1) in enumerate(spans):
        for x in range(x0, x1 + 1):
            for y in range(y0, y1 + 1):
                c = x * gy_n + y
                cell_faces[cursor[c]] = f
                cursor[c] += 1
    return cell_start, cell_faces, lo, cw


def count_ray_crossings(vertices, faces, queries, direction, backend=None) -> np.ndarray:
    """Per-query count of triangle crossings along +direction (t > 0)."""
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    u, v, d = projection_basis(direction)
    tri, nrm, pd, denom = _face_planes(vertices, faces, d)
    tri2 = np.stack([tri @ u, tri @ v], axis=-1)  # [F,3,2]
    q2 = np.stack([queries @ u, queries @ v], axis=-1)
    impl = _select(backend)
    if impl is _kernels_np:
        return impl.count_crossings(np.ascontiguousarray(tri2), nrm, pd, denom,
                                    np.ascontiguousarray(q2), queries)
    g = max(4, int(np.sqrt(max(faces.shape[0], 1))))
    gdim = np.array([g, g], dtype=np.int64)
    cell_start, cell_faces, lo, cw = _build_face_grid_2d(tri2, gdim)
    return impl.count_crossings(np.ascontiguousarray(tri2), nrm, pd, denom,
                                np.ascontiguousarray(q2), queries,
                                cell_start, cell_faces, lo, cw, gdim)


def nn_sq_dists(a: np.ndarray, b: np.ndarray, backend=None) -> np.ndarray:
    """Min squared distance from each point of a to the set b."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("nearest-neighbor query on an empty point set")
    impl = _select(backend)
    if impl is _kernels_np:
        return impl.nn_sq_dists(a, b)
    G = max(1, int(round(b.shape[0] ** (1.0 / 3.0))))
    lo = b.min(axis=0)
    hi = b.max(axis=0)
    extent = float((hi - lo).max())
    if extent == 0.0:
        # all reference points coincide; grid hashing degenerates
        return ((a - b[0]) ** 2).sum(axis=1)
    h = max(extent / G, 1e-12)
    lo = lo - 1e-9
    cell = np.minimum((np.floor((b - lo) / h)).astype(np.int64), G - 1)
    np.clip(cell, 0, G - 1, out=cell)
    flat = (cell[:, 0] * G + cell[:, 1]) * G + cell[:, 2]
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=G * G * G)
    cell_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return impl.nn_sq_dists(a, b, cell_start, order.astype(np.int64), lo, h, G)


def rasterize_depth(tri_px, tri_depth, res: int, backend=None) -> np.ndarray:
    return _select(backend).rasterize_depth(
        np.ascontiguousarray(tri_px, dtype=np.float64),
        np.ascontiguousarray(tri_depth, dtype=np.float64), res)
