"""Jitted kernels. Import this module only when numba is available."""

from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.typed import Dict


@njit(cache=True)
def fps_indices(points, m, start):
    n = points.shape[0]
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    best = np.empty(n, dtype=np.float64)
    sx, sy, sz = points[start, 0], points[start, 1], points[start, 2]
    for i in range(n):
        best[i] = (points[i, 0] - sx) ** 2 + (points[i, 1] - sy) ** 2 + (points[i, 2] - sz) ** 2
    for k in range(1, m):
        nxt = 0
        bv = best[0]
        for i in range(1, n):
            if best[i] > bv:  # strict: ties keep the smallest index
                bv = best[i]
                nxt = i
        chosen[k] = nxt
        nx, ny, nz = points[nxt, 0], points[nxt, 1], points[nxt, 2]
        for i in range(n):
            d = (points[i, 0] - nx) ** 2 + (points[i, 1] - ny) ** 2 + (points[i, 2] - nz) ** 2
            if d < best[i]:
                best[i] = d
    return chosen


@njit(cache=True)
def count_crossings(tri2, nrm, pd, denom, q2, q3, cell_start, cell_faces, gmin, cw, gdim):
    Q = q2.shape[0]
    out = np.zeros(Q, dtype=np.int64)
    gx_n, gy_n = gdim[0], gdim[1]
    for qi in range(Q):
        qx = q2[qi, 0]
        qy = q2[qi, 1]
        cx_i = int(np.floor((qx - gmin[0]) / cw[0]))
        cy_i = int(np.floor((qy - gmin[1]) / cw[1]))
        if cx_i < 0 or cx_i >= gx_n or cy_i < 0 or cy_i >= gy_n:
            continue  # outside every projected triangle
        cell = cx_i * gy_n + cy_i
        cnt = 0
        for fi in range(cell_start[cell], cell_start[cell + 1]):
            f = cell_faces[fi]
            dn = denom[f]
            if dn > -1e-12 and dn < 1e-12:
                continue
            ax, ay = tri2[f, 0, 0], tri2[f, 0, 1]
            bx, by = tri2[f, 1, 0], tri2[f, 1, 1]
            cx, cy = tri2[f, 2, 0], tri2[f, 2, 1]
            s1 = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
            s2 = (cx - bx) * (qy - by) - (cy - by) * (qx - bx)
            s3 = (ax - cx) * (qy - cy) - (ay - cy) * (qx - cx)
            inside = (s1 >= 0 and s2 >= 0 and s3 >= 0) or (s1 <= 0 and s2 <= 0 and s3 <= 0)
            if not inside:
                continue
            t_num = pd[f] - (nrm[f, 0] * q3[qi, 0] + nrm[f, 1] * q3[qi, 1] + nrm[f, 2] * q3[qi, 2])
            if t_num * dn > 0:
                cnt += 1
        out[qi] = cnt
    return out


@njit(cache=True)
def _grid_coord(v, lo, h, G):
    # cell index clamped to a band around the grid; queries beyond the band
    # only need "outside this face" for the ring bounds to stay valid
    f = (v - lo) / h
    if f < -(G + 1.0):
        return -(G + 1)
    if f > 2.0 * G + 1.0:
        return 2 * G + 1
    return int(np.floor(f))


@njit(cache=True)
def nn_sq_dists(a, b, cell_start, cell_pts, gmin, h, G):
    n = a.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        qx, qy, qz = a[i, 0], a[i, 1], a[i, 2]
        cx = _grid_coord(qx, gmin[0], h, G)
        cy = _grid_coord(qy, gmin[1], h, G)
        cz = _grid_coord(qz, gmin[2], h, G)
        # r0: first ring that can touch the grid (queries may lie outside
        # it); r_max: ring after which every grid cell was scanned. Grid
        # cells sit at Chebyshev distance in [r0, r_max] from the center,
        # and r_max - r0 <= G - 1, so the sweep below is bounded.
        r0 = 0
        r_max = 0
        for c in (cx, cy, cz):
            lo_gap = -c if c < 0 else 0
            hi_gap = c - (G - 1) if c > G - 1 else 0
            gap = lo_gap if lo_gap > hi_gap else hi_gap
            if gap > r0:
                r0 = gap
            span = c if c > G - 1 - c else G - 1 - c
            if span > r_max:
                r_max = span
        best = np.inf
        r = r0
        while True:
            # scan the Chebyshev shell at radius r, clamped to the grid
            x_lo = cx - r if cx - r > 0 else 0
            x_hi = cx + r if cx + r < G - 1 else G - 1
            y_lo = cy - r if cy - r > 0 else 0
            y_hi = cy + r if cy + r < G - 1 else G - 1
            z_lo = cz - r if cz - r > 0 else 0
            z_hi = cz + r if cz + r < G - 1 else G - 1
            for x in range(x_lo, x_hi + 1):
                x_on_shell = x == cx - r or x == cx + r
                for y in range(y_lo, y_hi + 1):
                    if x_on_shell or y == cy - r or y == cy + r:
                        for z in range(z_lo, z_hi + 1):
                            cell = (x * G + y) * G + z
                            for pi in range(cell_start[cell], cell_start[cell + 1]):
                                p = cell_pts[pi]
                                d = ((qx - b[p, 0]) ** 2 + (qy - b[p, 1]) ** 2
                                     + (qz - b[p, 2]) ** 2)
                                if d < best:
                                    best = d
                    else:
                        # x and y interior: only the two z shell planes are new
                        for z in (cz - r, cz + r):
                            if z < 0 or z >= G:
                                continue
                            cell = (x * G + y) * G + z
                            for pi in range(cell_start[cell], cell_start[cell + 1]):
                                p = cell_pts[pi]
                                d = ((qx - b[p, 0]) ** 2 + (qy - b[p, 1]) ** 2
                                     + (qz - b[p, 2]) ** 2)
                                if d < best:
                                    best = d
            # cells at ring r+1 are at least r*h away from the query point
            if best <= (r * h) * (r * h) and best < np.inf:
                break
            if r >= r_max:
                break  # grid exhausted; best is the exact minimum
            r += 1
        out[i] = best
    return out


@njit(cache=True)
def rasterize_depth(tri_px, tri_depth, res):
    buf = np.full((res, res), np.inf)
    for f in range(tri_px.shape[0]):
        minx = tri_px[f, 0, 0]
        maxx = minx
        miny = tri_px[f, 0, 1]
        maxy = miny
        for j in range(1, 3):
            vx = tri_px[f, j, 0]
            vy = tri_px[f, j, 1]
            if vx < minx:
                minx = vx
            if vx > maxx:
                maxx = vx
            if vy < miny:
                miny = vy
            if vy > maxy:
                maxy = vy
        x0 = max(0, int(np.floor(minx - 0.5)))
        x1 = min(res - 1, int(np.ceil(maxx - 0.5)))
        y0 = max(0, int(np.floor(miny - 0.5)))
        y1 = min(res - 1, int(np.ceil(maxy - 0.5)))
        if x1 < x0 or y1 < y0:
            continue
        ax, ay = tri_px[f, 0, 0], tri_px[f, 0, 1]
        bx, by = tri_px[f, 1, 0], tri_px[f, 1, 1]
        cx, cy = tri_px[f, 2, 0], tri_px[f, 2, 1]
        d = tri_depth[f]
        for ix in range(x0, x1 + 1):
            px = ix + 0.5
            for iy in range(y0, y1 + 1):
                py = iy + 0.5
                s1 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                s2 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                s3 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                if (s1 >= 0 and s2 >= 0 and s3 >= 0) or (s1 <= 0 and s2 <= 0 and s3 <= 0):
                    if d < buf[ix, iy]:
                        buf[ix, iy] = d
    return buf


@njit(cache=True)
def mc_core(values, iso, active, tri_table, edge_lower, edge_axis, edge_a_off, edge_b_off,
            verts_out, faces_out):
    R = values.shape[0]
    vert_of = Dict.empty(key_type=types.int64, value_type=types.int64)
    nv = 0
    nf = 0
    for n in range(active.shape[0]):
        ix, iy, iz = active[n, 0], active[n, 1], active[n, 2]
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
        k = 0
        while tri_table[code, k] >= 0:
            for j in range(3):
                e = tri_table[code, k + j]
                gx = ix + edge_lower[e, 0]
                gy = iy + edge_lower[e, 1]
                gz = iz + edge_lower[e, 2]
                key = ((gx * R + gy) * R + gz) * 3 + edge_axis[e]
                if key in vert_of:
                    vid = vert_of[key]
                else:
                    ox, oy, oz = edge_a_off[e, 0], edge_a_off[e, 1], edge_a_off[e, 2]
                    dx, dy, dz = edge_b_off[e, 0], edge_b_off[e, 1], edge_b_off[e, 2]
                    va = values[ix + ox, iy + oy, iz + oz]
                    vb = values[ix + dx, iy + dy, iz + dz]
                    dv = vb - va
                    t = 0.5 if dv == 0.0 else (iso - va) / dv
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                    verts_out[nv, 0] = ix + ox + t * (dx - ox)
                    verts_out[nv, 1] = iy + oy + t * (dy - oy)
                    verts_out[nv, 2] = iz + oz + t * (dz - oz)
                    vid = nv
                    vert_of[key] = vid
                    nv += 1
                faces_out[nf, j] = vid
            nf += 1
            k += 3
    return nv, nf
