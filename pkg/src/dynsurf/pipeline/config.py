"""Run configuration: a YAML tree mapped onto one flat dataclass.

Desk-scale defaults throughout; paper-scale values (T=17, L=300, N=2048,
lr=1e-4, 100 epochs) are reachable by editing the same fields.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..diffusion import EdmConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    latent_codes: int = 16          # M
    channels: int = 32              # C
    heads: int = 4
    shape_decoder_depth: int = 4
    shape_denoiser_depth: int = 3
    deform_denoiser_depth: int = 3
    # diffusion
    edm: EdmConfig = field(default_factory=EdmConfig)
    # training
    lr: float = 1e-3
    shape_vae_steps: int = 6000
    deform_vae_steps: int = 4000
    shape_diff_steps: int = 8000
    deform_diff_steps: int = 8000
    diffusion_batch: int = 4        # (sigma, eps) draws averaged per step
    val_every: int = 150
    encoder_points: int = 1024      # clean points fed to the encoders
    query_batch: int = 1024         # per query type and step
    bank_surface: int = 4096
    bank_uniform: int = 4096
    # corruption
    observed_points: int = 128      # L
    noise_sigma: float = 0.05
    partial_views: bool = False
    # evaluation
    iou_samples: int = 100_000
    chamfer_samples: int = 10_000
    corr_samples: int = 2048
    error_maps: bool = True
    # data synthesis
    frames: int = 5
    train_per_family: int = 4
    # io
    dataset_dir: str = "data"
    out_dir: str = "out"
    seed: int = 0
    threads: int = 1


_SECTIONS = {
    "model": ("latent_codes", "channels", "heads", "shape_decoder_depth",
              "shape_denoiser_depth", "deform_denoiser_depth"),
    "diffusion": ("sigma_data", "sigma_min", "sigma_max", "rho",
                  "p_mean", "p_std", "steps"),
    "training": ("lr", "shape_vae_steps", "deform_vae_steps", "shape_diff_steps",
                 "deform_diff_steps", "diffusion_batch", "val_every",
                 "encoder_points", "query_batch", "bank_surface", "bank_uniform"),
    "corruption": ("observed_points", "noise_sigma", "partial_views"),
    "evaluation": ("iou_samples", "chamfer_samples", "corr_samples", "error_maps"),
    "data": ("frames", "train_per_family"),
    "paths": ("dataset_dir", "out_dir"),
}
_TOP_LEVEL = ("seed", "threads")


def validate_config(cfg: RunConfig) -> None:
    if cfg.observed_points < cfg.latent_codes:
        raise ConfigError(
            f"observed_points ({cfg.observed_points}) must be >= latent_codes "
            f"({cfg.latent_codes}); the condition encoders downsample to M points")
    if cfg.channels % cfg.heads != 0:
        raise ConfigError(f"channels ({cfg.channels}) must divide by heads ({cfg.heads})")
    if cfg.noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    if cfg.frames < 2:
        raise ConfigError("frames must be >= 2")
    positive = ("latent_codes", "channels", "heads", "shape_decoder_depth",
                "shape_denoiser_depth", "deform_denoiser_depth",
                "shape_vae_steps", "deform_vae_steps", "shape_diff_steps",
                "deform_diff_steps", "diffusion_batch", "val_every",
                "encoder_points", "query_batch",
                "bank_surface", "bank_uniform", "observed_points",
                "iou_samples", "chamfer_samples", "corr_samples",
                "train_per_family", "threads")
    for name in positive:
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be > 0")
    if cfg.lr <= 0:
        raise ConfigError("lr must be > 0")
    if cfg.encoder_points < cfg.latent_codes:
        raise ConfigError("encoder_points must be >= latent_codes")
    # EdmConfig validates itself in __post_init__; re-build to re-check
    EdmConfig(**dataclasses.asdict(cfg.edm))


def config_to_dict(cfg: RunConfig) -> dict:
    tree = {}
    for section, names in _SECTIONS.items():
        if section == "diffusion":
            tree[section] = dataclasses.asdict(cfg.edm)
        else:
            tree[section] = {n: getattr(cfg, n) for n in names}
    for n in _TOP_LEVEL:
        tree[n] = getattr(cfg, n)
    return tree


def config_from_dict(tree: dict) -> RunConfig:
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    cfg = RunConfig()
    for section, content in tree.items():
        if section in _TOP_LEVEL:
            setattr(cfg, section, content)
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(content, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        known = _SECTIONS[section]
        for key, value in content.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section {section!r}")
            if section == "diffusion":
                cfg.edm = dataclasses.replace(cfg.edm, **{key: value})
            else:
                setattr(cfg, key, value)
    validate_config(cfg)
    return cfg


def load_config(path=None) -> RunConfig:
    """Defaults when path is None; otherwise parse, merge, validate."""
    if path is None:
        cfg = RunConfig()
        validate_config(cfg)
        return cfg
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        try:
            tree = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config parse error in {p}: {exc}") from exc
    return config_from_dict(tree or {})


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)


def require_dataset(cfg: RunConfig) -> None:
    if not (Path(cfg.dataset_dir) / "manifest.json").is_file():
        raise ConfigError(f"dataset not found under {cfg.dataset_dir!r} (run synth first)")


def require_checkpoints(cfg: RunConfig, names) -> None:
    from ..checkpoint import CheckpointError

    for name in names:
        p = Path(cfg.out_dir) / name
        if not p.is_file():
            raise CheckpointError(f"required checkpoint missing: {p}")
