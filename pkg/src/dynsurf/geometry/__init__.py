"""Meshes, sampling, occupancy, visibility, and isosurface extraction."""

from .kernels import available_backends
from .mesh import (MeshError, ScaleOffset, TriMesh, bounding_box, face_areas,
                   face_normals, is_watertight, normalize_mesh,
                   normalize_transform, orient_outward, require_watertight,
                   signed_volume, validate_mesh)
from .marching import marching_cubes
from .meshio import load_obj, save_grid_manifest, save_obj, save_ply
from .occupancy import RAY_DIRECTIONS, occupancy_query
from .partial import (DEFAULT_VIEW_DIR, DEPTH_RESOLUTION, partial_view_mask,
                      render_partial_view)
from .primitives import box, capsule, ellipsoid, icosphere
from .sampling import (SurfaceSamples, add_observation_noise, canonical_fps_start,
                       farthest_point_sample, near_surface_points, sample_surface,
                       transfer_samples)

__all__ = [
    "available_backends",
    "MeshError", "ScaleOffset", "TriMesh", "SurfaceSamples",
    "bounding_box", "face_areas", "face_normals", "is_watertight",
    "normalize_mesh", "normalize_transform", "orient_outward",
    "require_watertight", "signed_volume", "validate_mesh",
    "marching_cubes", "load_obj", "save_obj", "save_ply", "save_grid_manifest",
    "RAY_DIRECTIONS", "occupancy_query",
    "DEFAULT_VIEW_DIR", "DEPTH_RESOLUTION", "partial_view_mask", "render_partial_view",
    "box", "capsule", "ellipsoid", "icosphere",
    "add_observation_noise", "canonical_fps_start", "farthest_point_sample",
    "near_surface_points", "sample_surface", "transfer_samples",
]
