"""Deformation autoencoder: paired clouds -> latent set -> flow-field decoder.

Encodes the dense map between two corresponded point clouds into M codes;
the decoder turns a query point into an offset, so an untrained decoder is
exactly the identity map (the final layer starts at zero).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import (AttentionParams, PosEmbedParams, cross_attention_block,
                        positional_embedding)
from .geometry.sampling import canonical_fps_start, farthest_point_sample
from .shape_vae import _head, kl_divergence, reparameterize
from .tensor import ShapeError, Tensor

KL_WEIGHT = 1e-6


class DeformVae:
    def __init__(self, M: int = 16, C: int = 32, heads: int = 4, seed: int = 0):
        self.M = M
        self.C = C
        rng = np.random.default_rng(seed)
        self.pe = PosEmbedParams(C, rng)
        # src/tgt embeddings are concatenated channel-wise, then fused to C
        self.fuse_w, self.fuse_b = _head(2 * C, C, rng)
        self.enc_cross = AttentionParams(C, heads, rng)
        self.mu_w, self.mu_b = _head(C, C, rng)
        self.lv_w, self.lv_b = _head(C, C, rng)
        self.dec_query = AttentionParams(C, heads, rng)
        self.mlp1_w, self.mlp1_b = _head(2 * C, 4 * C, rng)
        self.mlp2_w, self.mlp2_b = _head(4 * C, 4 * C, rng)
        self.mlp3_w, self.mlp3_b = _head(4 * C, 4 * C, rng)
        self.out_w, self.out_b = _head(4 * C, 3, rng, scale=0.0)  # identity map at init
        self.params = self._collect()

    def _collect(self) -> dict:
        p = {}
        p.update(self.pe.named("deform_vae/pe"))
        p.update(self.enc_cross.named("deform_vae/enc_cross"))
        p.update(self.dec_query.named("deform_vae/dec_query"))
        for name in ["fuse_w", "fuse_b", "mu_w", "mu_b", "lv_w", "lv_b",
                     "mlp1_w", "mlp1_b", "mlp2_w", "mlp2_b", "mlp3_w", "mlp3_b",
                     "out_w", "out_b"]:
            p[f"deform_vae/{name}"] = getattr(self, name)
        return p

    def _pair_embed(self, x_src: np.ndarray, x_tgt: np.ndarray) -> Tensor:
        e_src = positional_embedding(x_src, self.pe)
        e_tgt = positional_embedding(x_tgt, self.pe)
        return T.affine(T.concat([e_src, e_tgt], axis=1), self.fuse_w, self.fuse_b)

    def encode(self, x_src: np.ndarray, x_tgt: np.ndarray) -> tuple:
        """Corresponding rows required; FPS indices come from the source
        cloud and are reused on the target, preserving the pairing."""
        x_src = np.asarray(x_src, dtype=np.float64)
        x_tgt = np.asarray(x_tgt, dtype=np.float64)
        if x_src.shape != x_tgt.shape:
            raise ShapeError(f"encode: pair shapes differ: {x_src.shape} vs {x_tgt.shape}")
        if x_src.shape[0] < self.M:
            raise ShapeError(f"encode: need at least M={self.M} points")
        idx = farthest_point_sample(x_src, self.M, canonical_fps_start(x_src))
        full = self._pair_embed(x_src, x_tgt)
        down = self._pair_embed(x_src[idx], x_tgt[idx])
        z = cross_attention_block(down, full, self.enc_cross)
        mu = T.affine(z, self.mu_w, self.mu_b)
        logvar = T.clamp(T.affine(z, self.lv_w, self.lv_b), -10.0, 10.0)
        return mu, logvar

    def decode(self, d: Tensor, q_src: np.ndarray) -> Tensor:
        """Apply the encoded deformation to query points: q + delta(q)."""
        q_src = np.asarray(q_src, dtype=np.float64)
        pe_q = positional_embedding(q_src, self.pe)
        z = cross_attention_block(pe_q, d, self.dec_query)
        h = T.concat([z, pe_q], axis=1)
        h = T.gelu(T.affine(h, self.mlp1_w, self.mlp1_b))
        h = T.gelu(T.affine(h, self.mlp2_w, self.mlp2_b))
        h = T.gelu(T.affine(h, self.mlp3_w, self.mlp3_b))
        delta = T.affine(h, self.out_w, self.out_b)
        return T.add(Tensor(q_src.astype(delta.data.dtype)), delta)


def deform_vae_loss(model: DeformVae, x_src: np.ndarray, x_tgt: np.ndarray,
                    q_src: np.ndarray, q_tgt: np.ndarray, seed: int,
                    kl_weight: float = KL_WEIGHT) -> tuple:
    """(total, mse, kl); mse is the mean squared offset error over queries
    whose ground-truth targets come from shared-topology correspondence."""
    mu, logvar = model.encode(x_src, x_tgt)
    d = reparameterize(mu, logvar, seed)
    pred = model.decode(d, q_src)
    diff = T.sub(pred, Tensor(np.asarray(q_tgt, dtype=pred.data.dtype)))
    mse = T.tmean(T.tsum(T.mul(diff, diff), axis=1))
    kl = kl_divergence(mu, logvar)
    total = T.add(mse, T.scale(kl, kl_weight))
    return total, mse, kl
