"""Latent diffusion with preconditioned denoisers and a Heun sampler.

The denoiser is D(x; sigma) = c_skip*x + c_out*F(c_in*x, c_noise, cond)
with the scaling coefficients below; F is a small attention network. Shape
latents are denoised as one [M,C] set; deformation sequences are denoised
jointly across frames with a single noise level per sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import (AttentionParams, IstaParams, PosEmbedParams,
                        cross_attention_block, ista_block, positional_embedding,
                        self_attention_block)
from .geometry.sampling import canonical_fps_start, farthest_point_sample
from .shape_vae import _head
from .tensor import NumericError, ShapeError, Tensor


@dataclass(frozen=True)
class EdmConfig:
    sigma_data: float = 1.0
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    p_mean: float = -1.2
    p_std: float = 1.2
    steps: int = 18

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("EdmConfig: need 0 < sigma_min < sigma_max")
        if self.steps < 1:
            raise ValueError("EdmConfig: steps must be >= 1")


def edm_precondition(sigma: float, cfg: EdmConfig) -> tuple:
    """(c_skip, c_out, c_in, c_noise) at noise level sigma."""
    if sigma <= 0:
        raise ValueError("edm_precondition: sigma must be > 0")
    sd2 = cfg.sigma_data ** 2
    s2 = sigma ** 2
    c_skip = sd2 / (s2 + sd2)
    c_out = sigma * cfg.sigma_data / np.sqrt(s2 + sd2)
    c_in = 1.0 / np.sqrt(s2 + sd2)
    c_noise = np.log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


def loss_weight(sigma: float, cfg: EdmConfig) -> float:
    return (sigma ** 2 + cfg.sigma_data ** 2) / (sigma * cfg.sigma_data) ** 2


def sample_sigma(batch: int, cfg: EdmConfig, seed: int) -> np.ndarray:
    """Training noise levels: ln(sigma) ~ N(p_mean, p_std^2)."""
    if batch < 1:
        raise ValueError("sample_sigma: batch must be >= 1")
    rng = np.random.default_rng(seed)
    return np.exp(cfg.p_mean + cfg.p_std * rng.standard_normal(batch))


def karras_schedule(cfg: EdmConfig) -> np.ndarray:
    """Descending noise levels, rho-warped, with a terminal zero entry."""
    n = cfg.steps
    if n == 1:
        return np.array([cfg.sigma_max, 0.0])
    inv = 1.0 / cfg.rho
    ramp = np.arange(n) / (n - 1)
    sig = (cfg.sigma_max ** inv + ramp * (cfg.sigma_min ** inv - cfg.sigma_max ** inv)) ** cfg.rho
    return np.append(sig, 0.0)


def noise_input(clean: np.ndarray, sigma: float, seed: int,
                shared_eps: bool = False) -> np.ndarray:
    """clean + sigma*eps. For a [T-1,M,C] sequence the level is one shared
    sigma; shared_eps additionally reuses one [M,C] draw for every frame."""
    rng = np.random.default_rng(seed)
    if shared_eps and clean.ndim == 3:
        eps = rng.standard_normal(clean.shape[1:])
        eps = np.broadcast_to(eps, clean.shape)
    else:
        eps = rng.standard_normal(clean.shape)
    return clean + sigma * eps


# ---------------------------------------------------------------------------
# condition encoders (deterministic twins of the VAE encoders)


class ShapeConditionEncoder:
    def __init__(self, M: int = 16, C: int = 32, heads: int = 4, seed: int = 0,
                 namespace: str = "cond_enc/shape"):
        self.M = M
        self.namespace = namespace
        rng = np.random.default_rng(seed)
        self.pe = PosEmbedParams(C, rng)
        self.cross = AttentionParams(C, heads, rng)
        self.head_w, self.head_b = _head(C, C, rng)
        self.params = {**self.pe.named(f"{namespace}/pe"),
                       **self.cross.named(f"{namespace}/cross"),
                       f"{namespace}/head_w": self.head_w,
                       f"{namespace}/head_b": self.head_b}

    def encode(self, points: np.ndarray) -> Tensor:
        points = np.asarray(points, dtype=np.float64)
        if points.shape[0] < self.M:
            raise ShapeError(f"condition encoder: need at least M={self.M} points")
        idx = farthest_point_sample(points, self.M, canonical_fps_start(points))
        z = cross_attention_block(positional_embedding(points[idx], self.pe),
                                  positional_embedding(points, self.pe), self.cross)
        return T.affine(z, self.head_w, self.head_b)


class DeformConditionEncoder:
    def __init__(self, M: int = 16, C: int = 32, heads: int = 4, seed: int = 0,
                 namespace: str = "cond_enc/deform"):
        self.M = M
        self.namespace = namespace
        rng = np.random.default_rng(seed)
        self.pe = PosEmbedParams(C, rng)
        self.fuse_w, self.fuse_b = _head(2 * C, C, rng)
        self.cross = AttentionParams(C, heads, rng)
        self.head_w, self.head_b = _head(C, C, rng)
        self.params = {**self.pe.named(f"{namespace}/pe"),
                       **self.cross.named(f"{namespace}/cross"),
                       f"{namespace}/fuse_w": self.fuse_w,
                       f"{namespace}/fuse_b": self.fuse_b,
                       f"{namespace}/head_w": self.head_w,
                       f"{namespace}/head_b": self.head_b}

    def _embed(self, p1, pt):
        e1 = positional_embedding(p1, self.pe)
        e2 = positional_embedding(pt, self.pe)
        return T.affine(T.concat([e1, e2], axis=1), self.fuse_w, self.fuse_b)

    def encode(self, p1: np.ndarray, pt: np.ndarray) -> Tensor:
        """One frame pair (first observation, frame-t observation) -> [M,C]."""
        p1 = np.asarray(p1, dtype=np.float64)
        pt = np.asarray(pt, dtype=np.float64)
        if p1.shape != pt.shape:
            raise ShapeError(f"condition encoder: pair shapes differ: {p1.shape} vs {pt.shape}")
        if p1.shape[0] < self.M:
            raise ShapeError(f"condition encoder: need at least M={self.M} points")
        idx = farthest_point_sample(p1, self.M, canonical_fps_start(p1))
        z = cross_attention_block(self._embed(p1[idx], pt[idx]),
                                  self._embed(p1, pt), self.cross)
        return T.affine(z, self.head_w, self.head_b)


# ---------------------------------------------------------------------------
# denoisers


class _NoiseEmbed:
    """c_noise scalar -> C-vector added to every code."""

    def __init__(self, C, rng, namespace):
        self.w1, self.b1 = _head(1, C, rng)
        self.w2, self.b2 = _head(C, C, rng)
        self.namespace = namespace

    def named(self):
        return {f"{self.namespace}/emb_w1": self.w1, f"{self.namespace}/emb_b1": self.b1,
                f"{self.namespace}/emb_w2": self.w2, f"{self.namespace}/emb_b2": self.b2}

    def __call__(self, c_noise: float) -> Tensor:
        x = Tensor(np.array([[c_noise]], dtype=T.get_default_dtype()))
        return T.affine(T.gelu(T.affine(x, self.w1, self.b1)), self.w2, self.b2)  # [1,C]


class ShapeDenoiser:
    """F = depth x (self-attention over codes, cross-attention with cond)."""

    def __init__(self, M: int = 16, C: int = 32, heads: int = 4, depth: int = 3,
                 cfg: EdmConfig = EdmConfig(), seed: int = 0):
        self.M = M
        self.C = C
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        ns = "shape_diff"
        self.noise_embed = _NoiseEmbed(C, rng, ns)
        self.blocks = [(AttentionParams(C, heads, rng), AttentionParams(C, heads, rng))
                       for _ in range(depth)]
        self.out_w, self.out_b = _head(C, C, rng, scale=0.0)  # D(x) = c_skip*x at init
        self.params = self.noise_embed.named()
        for i, (sa, ca) in enumerate(self.blocks):
            self.params.update(sa.named(f"{ns}/blk{i}_self"))
            self.params.update(ca.named(f"{ns}/blk{i}_cross"))
        self.params[f"{ns}/out_w"] = self.out_w
        self.params[f"{ns}/out_b"] = self.out_b

    def _f(self, x: Tensor, c_noise: float, cond: Tensor) -> Tensor:
        emb = T.expand(self.noise_embed(c_noise), x.shape)
        h = T.add(x, emb)
        for sa, ca in self.blocks:
            h = self_attention_block(h, sa, stage="space")
            h = cross_attention_block(h, cond, ca, stage="cond")
        return T.affine(h, self.out_w, self.out_b)

    def denoise(self, s_hat, sigma: float, cond: Tensor) -> Tensor:
        """Preconditioned denoiser output, same shape as s_hat."""
        x = s_hat if isinstance(s_hat, Tensor) else Tensor(
            np.asarray(s_hat, dtype=T.get_default_dtype()))
        if x.shape != (self.M, self.C):
            raise ShapeError(f"denoise: latent shape {x.shape} != ({self.M},{self.C})")
        c_skip, c_out, c_in, c_noise = edm_precondition(sigma, self.cfg)
        f = self._f(T.scale(x, c_in), c_noise, cond)
        return T.add(T.scale(x, c_skip), T.scale(f, c_out))


class DeformDenoiser:
    """Interleaved space/cond/time attention over the whole sequence.

    The per-frame conditioning codes are the frame's observation codes
    concatenated with the shape codes along the set dimension, so one
    cross-attention stage sees both.
    """

    def __init__(self, M: int = 16, C: int = 32, heads: int = 4, depth: int = 3,
                 cfg: EdmConfig = EdmConfig(), seed: int = 0):
        self.M = M
        self.C = C
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        ns = "deform_diff"
        self.noise_embed = _NoiseEmbed(C, rng, ns)
        self.blocks = [IstaParams(C, heads, rng) for _ in range(depth)]
        self.out_w, self.out_b = _head(C, C, rng, scale=0.0)
        self.params = self.noise_embed.named()
        for i, blk in enumerate(self.blocks):
            self.params.update(blk.named(f"{ns}/blk{i}"))
        self.params[f"{ns}/out_w"] = self.out_w
        self.params[f"{ns}/out_b"] = self.out_b

    def _f(self, x: Tensor, c_noise: float, cond: Tensor, shape_cond: Tensor) -> Tensor:
        t1, m, C = x.shape
        emb = T.expand(T.reshape(self.noise_embed(c_noise), (1, 1, C)), x.shape)
        h = T.add(x, emb)
        sc = T.expand(T.reshape(shape_cond, (1,) + shape_cond.shape), (t1,) + shape_cond.shape)
        kv = T.concat([cond, sc], axis=1)  # [T-1, 2M, C]
        for blk in self.blocks:
            h = ista_block(h, kv, blk)
        flat = T.reshape(h, (t1 * m, C))
        return T.reshape(T.affine(flat, self.out_w, self.out_b), (t1, m, C))

    def denoise(self, d_hat, sigma: float, cond: Tensor, shape_cond: Tensor) -> Tensor:
        x = d_hat if isinstance(d_hat, Tensor) else Tensor(
            np.asarray(d_hat, dtype=T.get_default_dtype()))
        if x.ndim != 3 or x.shape[1:] != (self.M, self.C):
            raise ShapeError(f"denoise: sequence shape {x.shape} != (T-1,{self.M},{self.C})")
        if cond.shape[0] != x.shape[0]:
            raise ShapeError(f"denoise: {x.shape[0]} frames but {cond.shape[0]} condition frames")
        c_skip, c_out, c_in, c_noise = edm_precondition(sigma, self.cfg)
        f = self._f(T.scale(x, c_in), c_noise, cond, shape_cond)
        return T.add(T.scale(x, c_skip), T.scale(f, c_out))


# ---------------------------------------------------------------------------
# training loss and sampling


def diffusion_loss(denoise_fn, clean: np.ndarray, cfg: EdmConfig, seed: int,
                   shared_eps: bool = False) -> Tensor:
    """Weighted l2 denoising loss at one sampled noise level.

    denoise_fn(noised_array, sigma) must return the denoised Tensor. The
    noise level is a single draw; for [T-1,M,C] sequences it is shared by
    every frame.
    """
    clean = np.asarray(clean)
    sigma = float(sample_sigma(1, cfg, seed)[0])
    noised = noise_input(clean, sigma, seed + 1, shared_eps=shared_eps)
    out = denoise_fn(noised, sigma)
    diff = T.sub(out, Tensor(clean.astype(out.data.dtype)))
    return T.scale(T.tsum(T.mul(diff, diff)), loss_weight(sigma, cfg))


def heun_sample(denoise_fn, shape: tuple, cfg: EdmConfig, seed: int) -> np.ndarray:
    """Deterministic 2nd-order sampler from pure noise at sigma_max.

    denoise_fn(x_array, sigma) -> denoised array. Raises NumericError if an
    intermediate state stops being finite.
    """
    sigmas = karras_schedule(cfg)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape) * sigmas[0]
    for i in range(len(sigmas) - 1):
        s, s_next = float(sigmas[i]), float(sigmas[i + 1])
        d = (x - denoise_fn(x, s)) / s
        x_next = x + (s_next - s) * d
        if s_next > 0:  # Heun correction, skipped on the final step to zero
            d2 = (x_next - denoise_fn(x_next, s_next)) / s_next
            x_next = x + (s_next - s) * 0.5 * (d + d2)
        if not np.isfinite(x_next).all():
            raise NumericError(f"sampler diverged at step {i} (sigma {s:.4g} -> {s_next:.4g})")
        x = x_next
    return x
