"""Vectorized numpy kernels: the fallback path when numba is disabled.

Each function here mirrors a jitted twin in ``_kernels_nb``; per-pair
arithmetic is written in the same order so both backends agree bitwise.
"""

from __future__ import annotations

import numpy as np


def fps_indices(points: np.ndarray, m: int, start: int) -> np.ndarray:
    px, py, pz = points[:, 0], points[:, 1], points[:, 2]
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    best = (px - px[start]) ** 2 + (py - py[start]) ** 2 + (pz - pz[start]) ** 2
    for i in range(1, m):
        nxt = int(np.argmax(best))  # argmax takes the first max: ties go to the smallest index
        chosen[i] = nxt
        d = (px - px[nxt]) ** 2 + (py - py[nxt]) ** 2 + (pz - pz[nxt]) ** 2
        np.minimum(best, d, out=best)
    return chosen


def count_crossings(tri2, nrm, pd, denom, q2, q3,
                    cell_start=None, cell_faces=None, grid=None) -> np.ndarray:
    """Crossing counts of rays q3 + t*dir, t>0, against projected triangles.

    tri2: [F,3,2] triangle vertices in the projection plane; nrm/pd: face plane
    normal and offset; denom: nrm . dir per face. Grid arguments are accepted
    for signature parity with the jitted twin and ignored (brute force here).
    """
    F = tri2.shape[0]
    Q = q2.shape[0]
    out = np.zeros(Q, dtype=np.int64)
    if F == 0:
        return out
    ax, ay = tri2[:, 0, 0], tri2[:, 0, 1]
    bx, by = tri2[:, 1, 0], tri2[:, 1, 1]
    cx, cy = tri2[:, 2, 0], tri2[:, 2, 1]
    valid = np.abs(denom) > 1e-12
    chunk = max(1, 2_000_000 // F)
    for s in range(0, Q, chunk):
        e = min(Q, s + chunk)
        qx = q2[s:e, 0, None]
        qy = q2[s:e, 1, None]
        s1 = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
        s2 = (cx - bx) * (qy - by) - (cy - by) * (qx - bx)
        s3 = (ax - cx) * (qy - cy) - (ay - cy) * (qx - cx)
        inside = ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))
        # t > 0 without dividing: sign(t) = sign((pd - nrm.q) * denom)
        t_num = pd[None, :] - q3[s:e] @ nrm.T
        out[s:e] = (inside & valid & ((t_num * denom) > 0)).sum(axis=1)
    return out


def nn_sq_dists(a: np.ndarray, b: np.ndarray,
                cell_start=None, cell_pts=None, gmin=None, h=None, G=None) -> np.ndarray:
    """Min squared distance from each row of a to the set b. Brute force."""
    n = a.shape[0]
    out = np.empty(n, dtype=np.float64)
    chunk = max(1, 2_000_000 // b.shape[0])
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        d = a[s:e, None, :] - b[None, :, :]
        sq = d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2
        out[s:e] = sq.min(axis=1)
    return out


def rasterize_depth(tri_px, tri_depth, res: int) -> np.ndarray:
    """Min-depth buffer over res x res pixel centers.

    tri_px: [F,3,2] vertices in continuous pixel coordinates; tri_depth: [F]
    one conservative depth per triangle (max over its vertices).
    """
    buf = np.full((res, res), np.inf)
    xs = np.arange(res) + 0.5
    for f in range(tri_px.shape[0]):
        t = tri_px[f]
        x0 = max(0, int(np.floor(t[:, 0].min() - 0.5)))
        x1 = min(res - 1, int(np.ceil(t[:, 0].max() - 0.5)))
        y0 = max(0, int(np.floor(t[:, 1].min() - 0.5)))
        y1 = min(res - 1, int(np.ceil(t[:, 1].max() - 0.5)))
        if x1 < x0 or y1 < y0:
            continue
        px = xs[x0:x1 + 1, None]
        py = xs[None, y0:y1 + 1]
        ax, ay = t[0]
        bx, by = t[1]
        cx, cy = t[2]
        s1 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        s2 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
        s3 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
        inside = ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))
        block = buf[x0:x1 + 1, y0:y1 + 1]
        np.minimum(block, np.where(inside, tri_depth[f], np.inf), out=block)
    return buf


def mc_core(values, iso: float, active, tri_table, edge_lower, edge_axis,
            edge_a_off, edge_b_off):
    """Triangulate active cells; vertices shared via canonical lattice-edge keys."""
    R = values.shape[0]
    verts: list = []
    faces: list = []
    vert_of: dict = {}
    for n in range(active.shape[0]):
        ix, iy, iz = int(active[n, 0]), int(active[n, 1]), int(active[n, 2])
        code = 0
        if values[ix, iy, iz] < iso:
            code |= 1
        if values[ix + 1, iy, iz] < iso:
            code |= 2
        if values[ix + 1, iy + 1, iz] < iso:
            code |= 4
        if values[ix, iy + 1, iz] < iso:
            code |= 8
        if values[ix, iy, iz + 1] < iso:
            code |= 16
        if values[ix + 1, iy, iz + 1] < iso:
            code |= 32
        if values[ix + 1, iy + 1, iz + 1] < iso:
            code |= 64
        if values[ix, iy + 1, iz + 1] < iso:
            code |= 128
        row = tri_table[code]
        k = 0
        while row[k] >= 0:
            tri_ids = []
            for j in range(3):
                e = row[k + j]
                gx = ix + edge_lower[e, 0]
                gy = iy + edge_lower[e, 1]
                gz = iz + edge_lower[e, 2]
                key = ((gx * R + gy) * R + gz) * 3 + edge_axis[e]
                vid = vert_of.get(key, -1)
                if vid < 0:
                    ox, oy, oz = edge_a_off[e]
                    dx, dy, dz = edge_b_off[e]
                    va = values[ix + ox, iy + oy, iz + oz]
                    vb = values[ix + dx, iy + dy, iz + dz]
                    dv = vb - va
                    t = 0.5 if dv == 0.0 else (iso - va) / dv
                    t = min(1.0, max(0.0, t))
                    verts.append((ix + ox + t * (dx - ox),
                                  iy + oy + t * (dy - oy),
                                  iz + oz + t * (dz - oz)))
                    vid = len(verts) - 1
                    vert_of[key] = vid
                tri_ids.append(vid)
            faces.append(tri_ids)
            k += 3
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    return v, f
