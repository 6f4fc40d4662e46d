"""Mesh file formats: OBJ in, binary little-endian PLY out.

OBJ reading accepts triangles with positions only; faces referencing
normals/texcoords (f 1/1/1 ...) keep just the position index. PLY writing
emits binary_little_endian 1.0 with optional uchar RGB per vertex. Grid
provenance for extracted meshes travels in a JSON sidecar manifest.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mesh import MeshError, TriMesh


def load_obj(path) -> TriMesh:
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("v "):
                parts = line.split()
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif line.startswith("f "):
                parts = line.split()[1:]
                if len(parts) != 3:
                    raise MeshError(f"{path}: only triangle faces supported, got {len(parts)}-gon")
                idx = [int(p.split("/")[0]) for p in parts]
                # OBJ indices are 1-based; negatives count from the end
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                faces.append(idx)
    if not verts:
        raise MeshError(f"{path}: no vertices found")
    return TriMesh(np.asarray(verts, dtype=np.float64),
                   np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(path, mesh: TriMesh) -> None:
    """Fixed 8-decimal formatting keeps outputs byte-stable across runs."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def save_ply(path, mesh: TriMesh, colors: np.ndarray | None = None) -> None:
    """colors: optional [V,3] uint8 RGB."""
    v = mesh.n_vertices
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {v}",
              "property float x", "property float y", "property float z"]
    if colors is not None:
        colors = np.ascontiguousarray(colors, dtype=np.uint8)
        if colors.shape != (v, 3):
            raise MeshError(f"save_ply: colors shape {colors.shape} != ({v}, 3)")
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices",
               "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        pos = mesh.vertices.astype("<f4")
        if colors is None:
            fh.write(pos.tobytes())
        else:
            for i in range(v):
                fh.write(pos[i].tobytes())
                fh.write(colors[i].tobytes())
        counts = np.full((mesh.n_faces, 1), 3, dtype=np.uint8)
        idx = mesh.faces.astype("<i4")
        for i in range(mesh.n_faces):
            fh.write(counts[i].tobytes())
            fh.write(idx[i].tobytes())


def save_grid_manifest(path, origin, cell_size: float, resolution: int, iso: float) -> None:
    """Sidecar recording how a grid-extracted mesh maps back to world space."""
    Path(path).write_text(json.dumps({
        "origin": [float(x) for x in origin],
        "cell_size": float(cell_size),
        "resolution": int(resolution),
        "iso": float(iso),
    }, indent=2) + "\n", encoding="utf-8")
