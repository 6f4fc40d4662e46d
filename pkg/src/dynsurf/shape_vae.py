"""Shape autoencoder: point cloud -> KL-regularized latent set -> occupancy.

The encoder anchors one latent code at each farthest-point-sampled input
point and fills it by cross-attending the anchor embeddings against the
full cloud. The decoder self-attends the latent set, then answers point
queries by cross-attention and a small head producing occupancy logits.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import (AttentionParams, PosEmbedParams, cross_attention_block,
                        positional_embedding, self_attention_block)
from .geometry.sampling import canonical_fps_start, farthest_point_sample
from .tensor import ShapeError, Tensor

LOGVAR_LIMIT = 10.0
KL_WEIGHT = 1e-3


def _head(C_in, C_out, rng, scale=None):
    dt = T.get_default_dtype()
    s = scale if scale is not None else 1.0 / np.sqrt(C_in)
    w = Tensor((rng.standard_normal((C_in, C_out)) * s).astype(dt), requires_grad=True)
    b = Tensor(np.zeros(C_out, dt), requires_grad=True)
    return w, b


class ShapeVae:
    def __init__(self, M: int = 16, C: int = 32, heads: int = 4,
                 decoder_depth: int = 4, seed: int = 0):
        self.M = M
        self.C = C
        rng = np.random.default_rng(seed)
        self.pe = PosEmbedParams(C, rng)
        self.enc_cross = AttentionParams(C, heads, rng)
        self.mu_w, self.mu_b = _head(C, C, rng)
        self.lv_w, self.lv_b = _head(C, C, rng)
        self.dec_blocks = [AttentionParams(C, heads, rng) for _ in range(decoder_depth)]
        self.dec_query = AttentionParams(C, heads, rng)
        self.occ1_w, self.occ1_b = _head(C, C, rng)
        self.occ2_w, self.occ2_b = _head(C, 1, rng)
        self.params = self._collect()

    def _collect(self) -> dict:
        p = {}
        p.update(self.pe.named("shape_vae/pe"))
        p.update(self.enc_cross.named("shape_vae/enc_cross"))
        for name, t in [("mu_w", self.mu_w), ("mu_b", self.mu_b),
                        ("lv_w", self.lv_w), ("lv_b", self.lv_b),
                        ("occ1_w", self.occ1_w), ("occ1_b", self.occ1_b),
                        ("occ2_w", self.occ2_w), ("occ2_b", self.occ2_b)]:
            p[f"shape_vae/{name}"] = t
        for i, blk in enumerate(self.dec_blocks):
            p.update(blk.named(f"shape_vae/dec_{i}"))
        p.update(self.dec_query.named("shape_vae/dec_query"))
        return p

    # -- encoder ------------------------------------------------------------

    def encode(self, points: np.ndarray) -> tuple:
        """[N,3] -> (mu, logvar) each [M,C].

        The FPS anchor sweep starts at the point farthest from the centroid,
        so the codes do not depend on input row order (up to fp reduction
        noise and exact distance ties).
        """
        points = np.asarray(points, dtype=np.float64)
        if points.shape[0] < self.M:
            raise ShapeError(f"encode: need at least M={self.M} points, got {points.shape[0]}")
        idx = farthest_point_sample(points, self.M, canonical_fps_start(points))
        pe_all = positional_embedding(points, self.pe)
        pe_anchor = positional_embedding(points[idx], self.pe)
        z = cross_attention_block(pe_anchor, pe_all, self.enc_cross)
        mu = T.affine(z, self.mu_w, self.mu_b)
        logvar = T.clamp(T.affine(z, self.lv_w, self.lv_b), -LOGVAR_LIMIT, LOGVAR_LIMIT)
        return mu, logvar

    # -- decoder ------------------------------------------------------------

    def refine_latents(self, s: Tensor) -> Tensor:
        for blk in self.dec_blocks:
            s = self_attention_block(s, blk)
        return s

    def decode_logits(self, refined: Tensor, queries: np.ndarray) -> Tensor:
        pe_q = positional_embedding(np.asarray(queries, dtype=np.float64), self.pe)
        feat = cross_attention_block(pe_q, refined, self.dec_query)
        h = T.gelu(T.affine(feat, self.occ1_w, self.occ1_b))
        logits = T.affine(h, self.occ2_w, self.occ2_b)
        return T.reshape(logits, (logits.shape[0],))

    def decode_occupancy(self, s: Tensor, queries: np.ndarray) -> Tensor:
        """Occupancy probabilities in (0,1), one per query."""
        return T.sigmoid(self.decode_logits(self.refine_latents(s), queries))


def reparameterize(mu: Tensor, logvar: Tensor, seed: int) -> Tensor:
    """mu + exp(logvar/2) * eps with seeded standard normal eps."""
    eps = np.random.default_rng(seed).standard_normal(mu.shape)
    eps = Tensor(eps.astype(mu.data.dtype))
    return T.add(mu, T.mul(T.exp(T.scale(logvar, 0.5)), eps))


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean over codes of the per-code KL against a unit Gaussian."""
    per_elem = T.sub(T.scale_add(T.add(T.mul(mu, mu), T.exp(logvar)), -1.0), logvar)
    return T.scale(T.tmean(T.tsum(per_elem, axis=1)), 0.5)


def shape_vae_loss(model: ShapeVae, points: np.ndarray, queries: np.ndarray,
                   occ_gt: np.ndarray, seed: int, kl_weight: float = KL_WEIGHT) -> tuple:
    """(total, bce, kl) with total = BCE + kl_weight * KL, BCE on logits."""
    occ = np.asarray(occ_gt)
    if not np.isin(occ, (0, 1)).all():
        raise ValueError("shape_vae_loss: ground-truth occupancy must be binary")
    mu, logvar = model.encode(points)
    s = reparameterize(mu, logvar, seed)
    logits = model.decode_logits(model.refine_latents(s), queries)
    bce = T.bce_with_logits(logits, occ.astype(logits.data.dtype))
    kl = kl_divergence(mu, logvar)
    total = T.add(bce, T.scale(kl, kl_weight))
    return total, bce, kl
