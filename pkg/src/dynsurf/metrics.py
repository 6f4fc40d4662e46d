"""Evaluation metrics: volumetric IoU, Chamfer distance, correspondence
error, and Chamfer error-map export."""

from __future__ import annotations

import numpy as np

from .geometry.kernels import nn_sq_dists
from .geometry.mesh import TriMesh, require_watertight
from .geometry.meshio import save_ply
from .geometry.occupancy import occupancy_query


def volumetric_iou(pred: TriMesh, gt: TriMesh, samples: int = 100_000,
                   seed: int = 0) -> float:
    """Monte-Carlo IoU over uniform points in the union bounding box."""
    require_watertight(pred, "volumetric IoU")
    require_watertight(gt, "volumetric IoU")
    lo = np.minimum(pred.vertices.min(axis=0), gt.vertices.min(axis=0))
    hi = np.maximum(pred.vertices.max(axis=0), gt.vertices.max(axis=0))
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(samples, 3))
    occ_p = occupancy_query(pred, pts, validate=False).astype(bool)
    occ_g = occupancy_query(gt, pts, validate=False).astype(bool)
    union = int((occ_p | occ_g).sum())
    if union == 0:
        return 0.0
    return float((occ_p & occ_g).sum() / union)


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """0.5 * (mean nearest distance a->b + mean nearest distance b->a)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("chamfer_distance: point sets must be non-empty")
    d_ab = np.sqrt(nn_sq_dists(a, b)).mean()
    d_ba = np.sqrt(nn_sq_dists(b, a)).mean()
    return float(0.5 * (d_ab + d_ba))


def correspondence_error(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean distance between index-matched point rows."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"correspondence_error: shapes differ: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def error_map_colors(dists: np.ndarray, clamp: float = 0.4) -> np.ndarray:
    """Linear blue -> red ramp over [0, clamp], as uint8 RGB."""
    if clamp <= 0:
        raise ValueError("error_map_colors: clamp must be > 0")
    t = np.clip(np.asarray(dists, dtype=np.float64) / clamp, 0.0, 1.0)
    colors = np.zeros((t.size, 3), dtype=np.uint8)
    colors[:, 0] = np.rint(255 * t)
    colors[:, 2] = np.rint(255 * (1.0 - t))
    return colors


def error_map_export(path, pred: TriMesh, gt_points: np.ndarray,
                     clamp: float = 0.4) -> np.ndarray:
    """Write pred as a PLY colored by per-vertex nearest-gt distance.

    Returns the per-vertex distances for inspection.
    """
    dists = np.sqrt(nn_sq_dists(pred.vertices, np.asarray(gt_points, dtype=np.float64)))
    save_ply(path, pred, colors=error_map_colors(dists, clamp))
    return dists


def format_metrics_row(sequence: str, frame, iou: float, chamfer: float,
                       corr: float) -> str:
    return f"{sequence},{frame},{iou:.6f},{chamfer:.6f},{corr:.6f}"


def write_metrics_csv(path, rows: list) -> None:
    """rows: (sequence, frame, iou, chamfer, corr) tuples; 6-decimal fixed."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sequence,frame,iou,chamfer,corr\n")
        for seq, frame, iou, ch, corr in rows:
            fh.write(format_metrics_row(seq, frame, iou, ch, corr) + "\n")
