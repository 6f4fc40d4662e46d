"""Synthetic deforming-sequence generator.

Four families of animated primitives with fixed topology per sequence, so
dense correspondence across frames is available by construction. All frames
of a sequence are normalized with one shared transform (union bounding box
centered, longest edge scaled to 1); per-frame normalization would destroy
the very motion the deformation models must learn.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry.mesh import ScaleOffset, TriMesh
from ..geometry.meshio import load_obj, save_obj
from ..geometry.primitives import box, capsule, ellipsoid, icosphere

FAMILIES = ("breathing-sphere", "bending-capsule", "articulated-box",
            "translating-ellipsoid")

MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "unseen-motion", "unseen-identity")

# identity parameter names per family; specs are validated against these
_IDENTITY_KEYS = {
    "breathing-sphere": ("radius", "stretch_z"),
    "bending-capsule": ("radius", "half_height"),
    "articulated-box": ("half_x", "half_y", "half_z"),
    "translating-ellipsoid": ("ax", "ay", "az"),
}
_MOTION_KEYS = ("amplitude", "phase")


@dataclass(frozen=True)
class SyntheticSequenceSpec:
    name: str
    family: str
    split: str
    frames: int
    identity: dict
    motion: dict
    seed: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.frames < 2:
            raise ValueError("sequence needs at least 2 frames")
        want = set(_IDENTITY_KEYS[self.family])
        if set(self.identity) != want:
            raise ValueError(f"{self.family} identity keys must be {sorted(want)}")
        if set(self.motion) != set(_MOTION_KEYS):
            raise ValueError(f"motion keys must be {sorted(_MOTION_KEYS)}")


def _base_mesh(family: str, ident: dict) -> TriMesh:
    if family == "breathing-sphere":
        m = icosphere(subdivisions=3, radius=ident["radius"])
        v = m.vertices.copy()
        v[:, 2] *= ident["stretch_z"]
        return m.with_vertices(v)
    if family == "bending-capsule":
        return capsule(radius=ident["radius"], half_height=ident["half_height"],
                       segments=20, rings=6, wall_rings=4)
    if family == "articulated-box":
        return box((ident["half_x"], ident["half_y"], ident["half_z"]), segments=6)
    if family == "translating-ellipsoid":
        return ellipsoid((ident["ax"], ident["ay"], ident["az"]), subdivisions=3)
    raise ValueError(f"unknown family {family!r}")


def _smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _deform(family: str, base: np.ndarray, ident: dict, motion: dict,
            u: float) -> np.ndarray:
    """Vertex positions at normalized time u in [0, 1]."""
    g = 2.0 * np.pi * u + motion["phase"]
    amp = motion["amplitude"]
    v = base.copy()
    if family == "breathing-sphere":
        return v * (1.0 + amp * np.sin(g))
    if family == "bending-capsule":
        # progressive bend about the bottom cap: rotation angle grows
        # linearly with height, so the axis curves into an arc
        h_total = ident["half_height"] + ident["radius"]
        theta = (amp * np.sin(g)) * (v[:, 2] + h_total) / (2.0 * h_total)
        c, s = np.cos(theta), np.sin(theta)
        y = v[:, 1]
        z = v[:, 2] + h_total
        v[:, 1] = y * c - z * s
        v[:, 2] = y * s + z * c - h_total
        return v
    if family == "articulated-box":
        # hinge at z=0 about the x axis; smooth blend band keeps the mesh
        # from creasing into degenerate faces
        w = _smoothstep(v[:, 2] / (0.5 * ident["half_z"]))
        theta = amp * np.sin(g) * w
        c, s = np.cos(theta), np.sin(theta)
        y, z = v[:, 1].copy(), v[:, 2].copy()
        v[:, 1] = y * c - z * s
        v[:, 2] = y * s + z * c
        return v
    if family == "translating-ellipsoid":
        off = amp * np.array([np.sin(g), 0.45 * np.sin(2.0 * g + 1.0), 0.3 * np.cos(g)])
        return v + off
    raise ValueError(f"unknown family {family!r}")


def build_sequence(spec: SyntheticSequenceSpec) -> list:
    """All frames of a sequence, jointly normalized, topology shared."""
    base = _base_mesh(spec.family, spec.identity)
    frames = []
    for t in range(spec.frames):
        u = t / (spec.frames - 1)
        frames.append(_deform(spec.family, base.vertices, spec.identity, spec.motion, u))
    stacked = np.concatenate(frames, axis=0)
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise ValueError("degenerate sequence: zero spatial extent")
    scale = 1.0 / extent
    offset = -0.5 * (lo + hi) * scale
    tf = ScaleOffset(scale, offset)
    return [TriMesh(tf.apply(v), base.faces) for v in frames]


def make_default_specs(seed: int, frames: int = 5, per_family: int = 4) -> list:
    """Train specs plus one unseen-motion and one unseen-identity spec per
    family. Parameter streams are per-family, so adding families later does
    not reshuffle existing draws."""

    def draw_identity(fam, rng):
        r = {
            "breathing-sphere": {"radius": rng.uniform(0.8, 1.2),
                                 "stretch_z": rng.uniform(0.9, 1.15)},
            "bending-capsule": {"radius": rng.uniform(0.25, 0.4),
                                "half_height": rng.uniform(0.5, 0.8)},
            "articulated-box": {"half_x": rng.uniform(0.25, 0.4),
                                "half_y": rng.uniform(0.2, 0.35),
                                "half_z": rng.uniform(0.5, 0.8)},
            "translating-ellipsoid": {"ax": rng.uniform(0.55, 0.9),
                                      "ay": rng.uniform(0.35, 0.6),
                                      "az": rng.uniform(0.35, 0.6)},
        }[fam]
        return {k: round(float(x), 6) for k, x in r.items()}

    def draw_motion(fam, rng):
        lo, hi = {"breathing-sphere": (0.12, 0.25),
                  "bending-capsule": (0.4, 0.8),
                  "articulated-box": (0.5, 0.9),
                  "translating-ellipsoid": (0.3, 0.6)}[fam]
        return {"amplitude": round(float(rng.uniform(lo, hi)), 6),
                "phase": round(float(rng.uniform(0.0, 2.0 * np.pi)), 6)}

    specs = []
    for fi, fam in enumerate(FAMILIES):
        rng = np.random.default_rng([seed, fi])
        train = []
        for i in range(per_family):
            spec = SyntheticSequenceSpec(
                name=f"{fam}-train-{i:02d}", family=fam, split="train",
                frames=frames, identity=draw_identity(fam, rng),
                motion=draw_motion(fam, rng), seed=int(rng.integers(2 ** 31)))
            train.append(spec)
            specs.append(spec)
        specs.append(SyntheticSequenceSpec(
            name=f"{fam}-unseen-motion-00", family=fam, split="unseen-motion",
            frames=frames, identity=dict(train[0].identity),
            motion=draw_motion(fam, rng), seed=int(rng.integers(2 ** 31))))
        specs.append(SyntheticSequenceSpec(
            name=f"{fam}-unseen-identity-00", family=fam, split="unseen-identity",
            frames=frames, identity=draw_identity(fam, rng),
            motion=dict(train[0].motion), seed=int(rng.integers(2 ** 31))))
    return specs


def synth_dataset(specs: list, out_dir) -> dict:
    """Write one OBJ per frame plus a manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for spec in specs:
        meshes = build_sequence(spec)
        seq_dir = out / spec.name
        seq_dir.mkdir(exist_ok=True)
        files = []
        for t, mesh in enumerate(meshes, start=1):
            rel = f"{spec.name}/frame_{t:03d}.obj"
            save_obj(out / rel, mesh)
            files.append(rel)
        records.append({
            "name": spec.name, "family": spec.family, "split": spec.split,
            "frames": spec.frames, "seed": spec.seed,
            "identity": spec.identity, "motion": spec.motion, "files": files,
        })
    manifest = {"format_version": 1, "sequences": records}
    with open(out / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != 1:
        raise ValueError(f"unsupported manifest version in {path}")
    return manifest


def sequences_in_split(manifest: dict, split: str) -> list:
    if split == "all":
        return list(manifest["sequences"])
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    return [s for s in manifest["sequences"] if s["split"] == split]


def load_sequence_meshes(dataset_dir, record: dict) -> list:
    return [load_obj(Path(dataset_dir) / rel) for rel in record["files"]]
