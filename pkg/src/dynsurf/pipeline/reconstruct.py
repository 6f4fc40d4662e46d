"""Observation-to-mesh-sequence inference and the evaluation harness.

Frame 1 comes from the shape route: sample a latent set conditioned on the
first observation, decode occupancy on a regular grid, extract the iso
surface. Every later frame reuses that mesh's topology and moves its
vertices with a sampled deformation latent, so cross-frame correspondence
holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diffusion import heun_sample
from ..geometry.marching import marching_cubes
from ..geometry.mesh import TriMesh
from ..geometry.meshio import save_obj
from ..geometry.sampling import sample_surface, transfer_samples
from ..metrics import (chamfer_distance, correspondence_error,
                       error_map_export, volumetric_iou, write_metrics_csv)
from ..tensor import Tensor, no_grad
from .config import RunConfig, require_checkpoints, require_dataset
from .data import build_sequence_bank
from .synth import load_manifest, load_sequence_meshes, sequences_in_split
from .training import (DEFORM_DIFF_CKPT, DEFORM_VAE_CKPT, SHAPE_DIFF_CKPT,
                       SHAPE_VAE_CKPT, _cond_sequence, _load_frozen, bank_seed,
                       build_deform_diffusion, build_deform_vae,
                       build_shape_diffusion, build_shape_vae,
                       float32_training, load_checkpoint, restore_params)

GRID_RESOLUTION = 64
GRID_LO = -0.55
GRID_HI = 0.55
DECODE_CHUNK = 8192


class ReconstructionError(RuntimeError):
    pass


@dataclass
class Models:
    shape_vae: object
    deform_vae: object
    shape_cond: object
    shape_den: object
    deform_cond: object
    deform_den: object


def load_models(cfg: RunConfig) -> Models:
    require_checkpoints(cfg, [SHAPE_VAE_CKPT, DEFORM_VAE_CKPT,
                              SHAPE_DIFF_CKPT, DEFORM_DIFF_CKPT])
    with float32_training():
        shape_vae = _load_frozen(cfg, SHAPE_VAE_CKPT, build_shape_vae, "shape_vae")
        deform_vae = _load_frozen(cfg, DEFORM_VAE_CKPT, build_deform_vae, "deform_vae")
        s_cond, s_den = build_shape_diffusion(cfg)
        _, loaded = load_checkpoint(Path(cfg.out_dir) / SHAPE_DIFF_CKPT)
        restore_params({**s_cond.params, **s_den.params}, loaded)
        d_cond, d_den = build_deform_diffusion(cfg)
        _, loaded = load_checkpoint(Path(cfg.out_dir) / DEFORM_DIFF_CKPT)
        restore_params({**d_cond.params, **d_den.params}, loaded)
    return Models(shape_vae, deform_vae, s_cond, s_den, d_cond, d_den)


def decode_occupancy_grid(vae, refined, resolution: int = GRID_RESOLUTION,
                          lo: float = GRID_LO, hi: float = GRID_HI) -> tuple:
    """Occupancy probabilities on a cubic lattice, chunked decode.

    Boundary planes are forced to zero so the iso surface always closes
    inside the grid.
    """
    axis = np.linspace(lo, hi, resolution)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    probs = np.empty(pts.shape[0], dtype=np.float64)
    with no_grad():
        for start in range(0, pts.shape[0], DECODE_CHUNK):
            chunk = pts[start:start + DECODE_CHUNK]
            logits = vae.decode_logits(refined, chunk).numpy().astype(np.float64)
            probs[start:start + chunk.shape[0]] = 1.0 / (1.0 + np.exp(-logits))
    values = probs.reshape(resolution, resolution, resolution)
    for axis_idx in range(3):
        sl = [slice(None)] * 3
        for edge in (0, -1):
            sl[axis_idx] = edge
            values[tuple(sl)] = 0.0
    cell = (hi - lo) / (resolution - 1)
    return values, (lo, lo, lo), cell


def reconstruct_sequence(observations: list, models: Models, cfg: RunConfig,
                         seed: int) -> list:
    """Corrupted per-frame clouds -> mesh per frame, topology shared."""
    if len(observations) < 2:
        raise ValueError("reconstruction needs at least 2 frames")
    for i, obs in enumerate(observations):
        obs = np.asarray(obs)
        if obs.ndim != 2 or obs.shape[1] != 3 or obs.shape[0] < cfg.latent_codes:
            raise ValueError(f"frame {i + 1}: observation must be [L>=M, 3], got {obs.shape}")
    with float32_training(), no_grad():
        cond1 = models.shape_cond.encode(observations[0])
        shape_lat = heun_sample(
            lambda x, s: models.shape_den.denoise(x, s, cond1).numpy(),
            (cfg.latent_codes, cfg.channels), cfg.edm, seed)
        refined = models.shape_vae.refine_latents(Tensor(shape_lat.astype(np.float32)))
        values, origin, cell = decode_occupancy_grid(models.shape_vae, refined)
        mesh1 = marching_cubes(values, iso=0.5, cell_size=cell, origin=origin)
        if mesh1.n_faces == 0:
            raise ReconstructionError("frame 1 decoded to an empty iso-surface")

        cond_seq = _cond_sequence(models.deform_cond, observations)
        shape_cond = Tensor(shape_lat.astype(np.float32))
        deform_lat = heun_sample(
            lambda x, s: models.deform_den.denoise(x, s, cond_seq, shape_cond).numpy(),
            (len(observations) - 1, cfg.latent_codes, cfg.channels),
            cfg.edm, seed + 1)

        meshes = [mesh1]
        for t in range(deform_lat.shape[0]):
            verts = models.deform_vae.decode(
                Tensor(deform_lat[t].astype(np.float32)), mesh1.vertices)
            meshes.append(TriMesh(verts.numpy().astype(np.float64), mesh1.faces))
    return meshes


def save_reconstruction(out_dir, name: str, meshes: list) -> list:
    seq_dir = Path(out_dir) / "recon" / name
    seq_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, mesh in enumerate(meshes, start=1):
        p = seq_dir / f"frame_{t:03d}.obj"
        save_obj(p, mesh)
        paths.append(p)
    return paths


# -- evaluation -------------------------------------------------------------


def _nearest_index(queries: np.ndarray, points: np.ndarray,
                   chunk: int = 1024) -> np.ndarray:
    out = np.empty(queries.shape[0], dtype=np.int64)
    for s in range(0, queries.shape[0], chunk):
        q = queries[s:s + chunk]
        d = ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        out[s:s + q.shape[0]] = np.argmin(d, axis=1)
    return out


def evaluate_split(cfg: RunConfig, split: str, models: Models | None = None,
                   write: bool = True) -> dict:
    """Reconstruct and score every sequence of a split.

    Correspondence is tracked from samples on the predicted first frame:
    their ground-truth twins are the transferred positions of the nearest
    gt frame-1 surface point, so corr combines reconstruction offset and
    motion-tracking drift. The copy-first-frame baseline repeats the
    predicted frame 1 and is scored with the same chamfer/corr machinery.
    """
    require_dataset(cfg)
    manifest = load_manifest(cfg.dataset_dir)
    records = sequences_in_split(manifest, split)
    if not records:
        raise ValueError(f"split {split!r} has no sequences")
    if models is None:
        models = load_models(cfg)
    out = Path(cfg.out_dir)
    rows, baseline_rows = [], []
    per_sequence = {}
    for rec in records:
        meshes = load_sequence_meshes(cfg.dataset_dir, rec)
        seed0 = bank_seed(cfg, rec)
        bank = build_sequence_bank(rec, meshes, cfg, seed0, with_queries=False)
        pred = reconstruct_sequence(bank.observations, models, cfg, seed0 + 999)

        # correspondence tracks: predicted route and ground-truth route
        pred_track0 = sample_surface(pred[0], cfg.corr_samples, seed0 + 1)
        gt_dense = bank.bank1.surface
        nearest = _nearest_index(pred_track0.points, gt_dense.points)
        gt_face = gt_dense.face_index[nearest]
        gt_bary = gt_dense.barycentric[nearest]

        seq_rows, seq_base = [], []
        pred1_samples = sample_surface(pred[0], cfg.chamfer_samples, seed0 + 2)
        for t in range(len(meshes)):
            gt_samples = sample_surface(meshes[t], cfg.chamfer_samples, seed0 + 3 + t)
            pred_samples = (pred1_samples if t == 0 else
                            sample_surface(pred[t], cfg.chamfer_samples, seed0 + 3 + t))
            iou = volumetric_iou(pred[t], meshes[t], cfg.iou_samples, seed0 + 40 + t)
            ch = chamfer_distance(pred_samples.points, gt_samples.points)
            pred_pos = (pred_track0.points if t == 0 else
                        transfer_samples(pred[t], pred_track0.face_index,
                                         pred_track0.barycentric))
            gt_pos = (transfer_samples(meshes[0], gt_face, gt_bary) if t == 0 else
                      transfer_samples(meshes[t], gt_face, gt_bary))
            corr = correspondence_error(pred_pos, gt_pos)
            seq_rows.append((rec["name"], t + 1, iou, ch, corr))

            base_ch = (ch if t == 0 else
                       chamfer_distance(pred1_samples.points, gt_samples.points))
            base_corr = correspondence_error(pred_track0.points, gt_pos)
            seq_base.append((rec["name"], t + 1, base_ch, base_corr))

            if write and cfg.error_maps:
                map_dir = out / "error_maps"
                map_dir.mkdir(parents=True, exist_ok=True)
                error_map_export(map_dir / f"{rec['name']}_frame_{t + 1:03d}.ply",
                                 pred[t], gt_samples.points)

        means = [float(np.mean([r[i] for r in seq_rows])) for i in (2, 3, 4)]
        rows.extend(seq_rows)
        rows.append((rec["name"], "mean", *means))
        base_mean_ch = float(np.mean([r[2] for r in seq_base]))
        baseline_rows.extend(seq_base)
        baseline_rows.append((rec["name"], "mean", base_mean_ch,
                              float(np.mean([r[3] for r in seq_base]))))
        per_sequence[rec["name"]] = {
            "split": rec["split"], "mean_iou": means[0], "mean_chamfer": means[1],
            "mean_corr": means[2], "baseline_mean_chamfer": base_mean_ch,
        }

    wins = [1.0 if s["mean_chamfer"] < s["baseline_mean_chamfer"] else 0.0
            for s in per_sequence.values()]
    summary = {
        "split": split,
        "sequences": per_sequence,
        "beat_baseline_fraction": float(np.mean(wins)),
    }
    if write:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"metrics_{split}.csv"
        write_metrics_csv(csv_path, rows)
        with open(out / f"baseline_{split}.csv", "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write("sequence,frame,chamfer,corr\n")
            for name, frame, ch, corr in baseline_rows:
                fh.write(f"{name},{frame},{ch:.6f},{corr:.6f}\n")
        summary["csv"] = str(csv_path)
    return summary
