"""Precomputed per-mesh sample banks and the observation corruption chain.

Banks amortize the expensive parts (occupancy ray casting, surface sampling)
so training steps only index into arrays. Corruption order is fixed:
partial-view filter, then subsample to L, then additive noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry.mesh import TriMesh, face_normals
from ..geometry.occupancy import occupancy_query
from ..geometry.partial import render_partial_view
from ..geometry.sampling import (SurfaceSamples, add_observation_noise,
                                 near_surface_points, sample_surface,
                                 transfer_samples)

NEAR_SIGMAS = (0.05, 0.15)


@dataclass
class MeshBank:
    mesh: TriMesh
    surface: SurfaceSamples
    near_points: np.ndarray
    near_occ: np.ndarray
    near_deltas: np.ndarray
    uniform_points: np.ndarray
    uniform_occ: np.ndarray
    val_points: np.ndarray
    val_occ: np.ndarray


def build_mesh_bank(mesh: TriMesh, n_surface: int, n_uniform: int,
                    seed: int, n_val: int = 512) -> MeshBank:
    # near-surface points mirror the surface bank row for row; sequence
    # banks transport their deltas onto later frames by that pairing
    surface = sample_surface(mesh, n_surface, seed)
    near_pts, near_occ, near_deltas = near_surface_points(mesh, surface, NEAR_SIGMAS, seed + 2)

    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    pad = 0.1 * (hi - lo).max()
    rng = np.random.default_rng(seed + 3)
    uniform = rng.uniform(lo - pad, hi + pad, size=(n_uniform, 3))
    uniform_occ = occupancy_query(mesh, uniform, validate=False)

    # held-out validation queries, drawn from a separate stream
    vrng = np.random.default_rng(seed + 4)
    v_uni = vrng.uniform(lo - pad, hi + pad, size=(n_val, 3))
    v_near_src = sample_surface(mesh, n_val, seed + 5)
    v_near, v_near_occ, _ = near_surface_points(mesh, v_near_src, NEAR_SIGMAS, seed + 6)
    val_points = np.concatenate([v_uni, v_near])
    val_occ = np.concatenate([occupancy_query(mesh, v_uni, validate=False), v_near_occ])

    return MeshBank(mesh, surface, near_pts, near_occ.astype(np.float64),
                    near_deltas, uniform, uniform_occ.astype(np.float64),
                    val_points, val_occ.astype(np.float64))


def shape_training_batch(bank: MeshBank, n_query: int, n_enc: int,
                         rng: np.random.Generator):
    """(encoder points, queries, occupancy) for one step; queries are an
    even mix of uniform and near-surface draws."""
    enc_idx = rng.choice(bank.surface.n, size=n_enc, replace=False)
    uni_idx = rng.choice(bank.uniform_points.shape[0], size=n_query, replace=False)
    near_idx = rng.choice(bank.near_points.shape[0], size=n_query, replace=False)
    queries = np.concatenate([bank.uniform_points[uni_idx], bank.near_points[near_idx]])
    occ = np.concatenate([bank.uniform_occ[uni_idx], bank.near_occ[near_idx]])
    return bank.surface.points[enc_idx], queries, occ


@dataclass
class SequenceBank:
    """Frame meshes plus correspondence-carrying sample banks.

    tgt_points[t] / tgt_near[t] are the frame-(t+2) positions of bank1's
    surface samples and near-surface offsets (same deltas, frame-local
    normals), so row i corresponds across every frame.
    """

    record: dict
    meshes: list
    bank1: MeshBank
    tgt_points: list
    tgt_near: list
    observations: list  # one corrupted [L,3] cloud per frame
    val_src: np.ndarray  # held-out frame-1 surface points
    val_tgt: list        # their transferred positions per later frame


def _subsample(points: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    if points.shape[0] < count:
        raise ValueError(
            f"cannot subsample {count} from {points.shape[0]} points; "
            "partial view removed too much of the surface")
    return points[rng.choice(points.shape[0], size=count, replace=False)]


def corrupt_observation(mesh: TriMesh, samples: SurfaceSamples, count: int,
                        sigma: float, partial: bool, seed: int,
                        view_dir=None) -> np.ndarray:
    """Partial-view filter (optional), subsample to a fixed count, then
    Gaussian noise. The order is part of the contract."""
    kept = samples
    if partial:
        kept = render_partial_view(mesh, kept, view_dir)
    rng = np.random.default_rng(seed)
    sub = _subsample(kept.points, count, rng)
    return add_observation_noise(sub, sigma, seed + 1)


def build_sequence_bank(record: dict, meshes: list, cfg, seed: int,
                        with_queries: bool = True) -> SequenceBank:
    bank1 = build_mesh_bank(meshes[0], cfg.bank_surface,
                            cfg.bank_uniform if with_queries else 16, seed)
    tgt_points, tgt_near = [], []
    for mesh_t in meshes[1:]:
        pts_t = transfer_samples(mesh_t, bank1.surface.face_index, bank1.surface.barycentric)
        normals_t = face_normals(mesh_t, unit=True)[bank1.surface.face_index]
        tgt_points.append(pts_t)
        tgt_near.append(pts_t + bank1.near_deltas[:, None] * normals_t)
    observations = []
    for t, mesh_t in enumerate(meshes):
        samples_t = bank1.surface if t == 0 else SurfaceSamples(
            tgt_points[t - 1], bank1.surface.face_index,
            bank1.surface.barycentric, face_normals(mesh_t, unit=True)[bank1.surface.face_index])
        observations.append(corrupt_observation(
            mesh_t, samples_t, cfg.observed_points, cfg.noise_sigma,
            cfg.partial_views, seed=seed + 7 * (t + 1)))
    val = sample_surface(meshes[0], 512, seed + 9)
    val_tgt = [transfer_samples(m, val.face_index, val.barycentric) for m in meshes[1:]]
    return SequenceBank(record, meshes, bank1, tgt_points, tgt_near,
                        observations, val.points, val_tgt)


def deform_training_batch(bank: SequenceBank, t_index: int, n_query: int,
                          n_enc: int, rng: np.random.Generator):
    """(x_src, x_tgt, q_src, q_tgt) for frame pair (1, t_index+2).

    Queries mix on-surface and near-surface points; targets come from the
    shared-topology transfer, so they are exact correspondences.
    """
    surf = bank.bank1.surface
    tgt = bank.tgt_points[t_index]
    enc_idx = rng.choice(surf.n, size=n_enc, replace=False)
    q_s = rng.choice(surf.n, size=n_query, replace=False)
    q_n = rng.choice(bank.bank1.near_points.shape[0], size=n_query, replace=False)
    q_src = np.concatenate([surf.points[q_s], bank.bank1.near_points[q_n]])
    q_tgt = np.concatenate([tgt[q_s], bank.tgt_near[t_index][q_n]])
    return surf.points[enc_idx], tgt[enc_idx], q_src, q_tgt
