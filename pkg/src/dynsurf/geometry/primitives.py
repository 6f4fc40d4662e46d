"""Watertight primitive meshes used as synthetic identities.

All builders return outward-oriented closed meshes; deforming their vertex
arrays (without touching faces) preserves topology across a sequence.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh, orient_outward

_PHI = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array([
    [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
    [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
    [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
], dtype=np.float64)

_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(subdivisions):
        midpoint: dict = {}
        new_faces = []

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    mesh = TriMesh(np.asarray(verts) * radius, np.asarray(faces, dtype=np.int64))
    return orient_outward(mesh)


def ellipsoid(semi_axes, subdivisions: int = 3) -> TriMesh:
    base = icosphere(subdivisions)
    return orient_outward(TriMesh(base.vertices * np.asarray(semi_axes, dtype=np.float64),
                                  base.faces))


def box(half_extents, segments: int = 8) -> TriMesh:
    """Axis-aligned box with a welded segments x segments grid per side."""
    g = int(segments)
    half = np.asarray(half_extents, dtype=np.float64)
    index: dict = {}
    verts = []

    def vid(i, j, k):
        key = (i, j, k)
        if key not in index:
            verts.append((2.0 * i / g - 1.0, 2.0 * j / g - 1.0, 2.0 * k / g - 1.0))
            index[key] = len(verts) - 1
        return index[key]

    faces = []
    # (fixed axis, side, in-plane axes ordered so quads wind outward)
    sides = [(0, g, 1, 2), (0, 0, 2, 1), (1, g, 2, 0), (1, 0, 0, 2),
             (2, g, 0, 1), (2, 0, 1, 0)]
    for axis, s, a, b in sides:
        for i in range(g):
            for j in range(g):
                def corner(di, dj):
                    c = [0, 0, 0]
                    c[axis] = s
                    c[a] = i + di
                    c[b] = j + dj
                    return vid(*c)
                p00, p10 = corner(0, 0), corner(1, 0)
                p11, p01 = corner(1, 1), corner(0, 1)
                faces += [(p00, p10, p11), (p00, p11, p01)]
    mesh = TriMesh(np.asarray(verts) * half, np.asarray(faces, dtype=np.int64))
    return orient_outward(mesh)


def capsule(radius: float = 0.3, half_height: float = 0.5, segments: int = 24,
            rings: int = 8, wall_rings: int = 6) -> TriMesh:
    """Cylinder of half-length half_height with hemispherical caps."""
    s = int(segments)
    theta = 2.0 * np.pi * np.arange(s) / s
    ct, st = np.cos(theta), np.sin(theta)
    ring_rows = []  # list of (radius, z) from bottom to top, poles excluded
    for k in range(1, rings + 1):
        phi = -0.5 * np.pi + 0.5 * np.pi * k / rings
        ring_rows.append((radius * np.cos(phi), radius * np.sin(phi) - half_height))
    for j in range(1, wall_rings):
        ring_rows.append((radius, -half_height + 2.0 * half_height * j / wall_rings))
    for k in range(0, rings):
        phi = 0.5 * np.pi * k / rings
        ring_rows.append((radius * np.cos(phi), radius * np.sin(phi) + half_height))

    verts = [(0.0, 0.0, -radius - half_height)]
    for rho, z in ring_rows:
        for i in range(s):
            verts.append((rho * ct[i], rho * st[i], z))
    verts.append((0.0, 0.0, radius + half_height))
    bottom_pole = 0
    top_pole = len(verts) - 1

    def ring_vid(row, i):
        return 1 + row * s + i % s

    faces = []
    for i in range(s):
        faces.append((bottom_pole, ring_vid(0, i + 1), ring_vid(0, i)))
    for row in range(len(ring_rows) - 1):
        for i in range(s):
            l0, l1 = ring_vid(row, i), ring_vid(row, i + 1)
            u0, u1 = ring_vid(row + 1, i), ring_vid(row + 1, i + 1)
            faces += [(l0, l1, u1), (l0, u1, u0)]
    last = len(ring_rows) - 1
    for i in range(s):
        faces.append((top_pole, ring_vid(last, i), ring_vid(last, i + 1)))
    mesh = TriMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))
    return orient_outward(mesh)
