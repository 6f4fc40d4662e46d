"""Set attention blocks and the interleaved space/condition/time stack.

Latent sets are [M, C] arrays of codes; sequences are [T-1, M, C]. Blocks
are pre-norm residual (attention, then GELU feed-forward). A process-wide
counter can record attention-score and value-mix multiply-adds per stage,
which the complexity tests compare against the analytic count.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

# ---------------------------------------------------------------------------
# multiply-add instrumentation


class FlopCounter:
    def __init__(self):
        self.score: dict = {}
        self.mix: dict = {}

    def _add(self, table, stage, n):
        table[stage] = table.get(stage, 0) + int(n)

    def total(self, stages=None) -> int:
        keys = stages if stages is not None else set(self.score) | set(self.mix)
        return sum(self.score.get(k, 0) + self.mix.get(k, 0) for k in keys)


_active_counter = None


@contextmanager
def count_flops():
    global _active_counter
    counter = FlopCounter()
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = None


def _record(stage: str, batch: int, nq: int, nk: int, C: int) -> None:
    if _active_counter is not None:
        madds = batch * nq * nk * C
        _active_counter._add(_active_counter.score, stage, madds)
        _active_counter._add(_active_counter.mix, stage, madds)


@dataclass(frozen=True)
class FlopCount:
    score: int
    mix: int

    @property
    def total(self) -> int:
        return self.score + self.mix


def flops_count(T_frames: int, M: int, C: int, mode: str) -> FlopCount:
    """Analytic attention-score / value-mix multiply-adds.

    mode 'ista': per-frame self-attention over M codes plus per-index
    self-attention over T_frames (conditioning cross-attention is identical
    in both regimes and excluded from the claim). mode 'full': one
    self-attention over all T_frames*M tokens.
    """
    if T_frames < 1 or M < 1:
        raise ValueError("flops_count: T and M must be >= 1")
    if mode == "ista":
        score = (T_frames * M * M + M * T_frames * T_frames) * C
    elif mode == "full":
        score = (T_frames * M) ** 2 * C
    else:
        raise ValueError(f"flops_count: unknown mode {mode!r}")
    return FlopCount(score=score, mix=score)


# ---------------------------------------------------------------------------
# parameters


class AttentionParams:
    """Weights for one pre-norm attention block with feed-forward."""

    def __init__(self, C: int, heads: int, rng: np.random.Generator, name: str = "attn"):
        if C % heads != 0:
            raise ShapeError(f"channel count {C} not divisible by {heads} heads")
        self.C = C
        self.heads = heads
        self.name = name
        dt = T.get_default_dtype()
        s = 1.0 / np.sqrt(C)
        sf = 1.0 / np.sqrt(4 * C)

        def w(shape, scale):
            return Tensor((rng.standard_normal(shape) * scale).astype(dt), requires_grad=True)

        self.wq = w((C, C), s)
        self.wk = w((C, C), s)
        self.wv = w((C, C), s)
        self.wo = w((C, C), s)
        self.ff1_w = w((C, 4 * C), s)
        self.ff1_b = Tensor(np.zeros(4 * C, dt), requires_grad=True)
        self.ff2_w = w((4 * C, C), sf)
        self.ff2_b = Tensor(np.zeros(C, dt), requires_grad=True)
        self.ln1_g = Tensor(np.ones(C, dt), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(C, dt), requires_grad=True)
        self.ln2_g = Tensor(np.ones(C, dt), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(C, dt), requires_grad=True)

    def named(self, prefix: str) -> dict:
        fields = ["wq", "wk", "wv", "wo", "ff1_w", "ff1_b", "ff2_w", "ff2_b",
                  "ln1_g", "ln1_b", "ln2_g", "ln2_b"]
        return {f"{prefix}/{f}": getattr(self, f) for f in fields}


class PosEmbedParams:
    """Learned projection of fixed sinusoidal features to C channels."""

    OCTAVES = 8

    def __init__(self, C: int, rng: np.random.Generator):
        dt = T.get_default_dtype()
        fdim = 2 * 3 * self.OCTAVES
        self.w = Tensor((rng.standard_normal((fdim, C)) / np.sqrt(fdim)).astype(dt),
                        requires_grad=True)
        self.b = Tensor(np.zeros(C, dt), requires_grad=True)

    def named(self, prefix: str) -> dict:
        return {f"{prefix}/w": self.w, f"{prefix}/b": self.b}


def sinusoid_features(points: np.ndarray) -> np.ndarray:
    """[n,3] -> [n,48]: sin/cos at octave frequencies per axis, fixed."""
    pts = np.asarray(points)
    freqs = (2.0 ** np.arange(PosEmbedParams.OCTAVES)) * np.pi
    ang = pts[:, :, None] * freqs[None, None, :]  # [n,3,8]
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=2)  # [n,3,16]
    return feats.reshape(pts.shape[0], -1).astype(T.get_default_dtype())


def positional_embedding(points: np.ndarray, params: PosEmbedParams) -> Tensor:
    if points.shape[-1] != 3:
        raise ShapeError(f"positional embedding expects [n,3] points, got {points.shape}")
    return T.affine(Tensor(sinusoid_features(points)), params.w, params.b)


# ---------------------------------------------------------------------------
# blocks


def _heads_split(x: Tensor, heads: int) -> Tensor:
    """[..., n, C] -> [..., h, n, C/h]"""
    *lead, n, C = x.shape
    hd = C // heads
    y = T.reshape(x, (*lead, n, heads, hd))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return T.transpose(y, tuple(axes))


def _heads_merge(x: Tensor) -> Tensor:
    """[..., h, n, hd] -> [..., n, h*hd]"""
    *lead, h, n, hd = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    y = T.transpose(x, tuple(axes))
    return T.reshape(y, (*lead, n, h * hd))


def _project(x: Tensor, w: Tensor) -> Tensor:
    *lead, n, C = x.shape
    flat = T.reshape(x, (int(np.prod(lead, initial=1)) * n, C))
    return T.reshape(T.matmul(flat, w), (*lead, n, w.shape[1]))


def _attend(q: Tensor, kv: Tensor, p: AttentionParams, stage: str) -> Tensor:
    """Multi-head attention; q [..., n, C], kv [..., m, C], shared batch dims."""
    *lead, n, C = q.shape
    m = kv.shape[-2]
    hd = C // p.heads
    qh = _heads_split(_project(q, p.wq), p.heads)
    kh = _heads_split(_project(kv, p.wk), p.heads)
    vh = _heads_split(_project(kv, p.wv), p.heads)
    ndim = qh.ndim
    kt = T.transpose(kh, tuple(range(ndim - 2)) + (ndim - 1, ndim - 2))
    scores = T.scale(T.matmul(qh, kt), 1.0 / np.sqrt(hd))
    attn = T.softmax_lastdim(scores)
    out = T.matmul(attn, vh)
    _record(stage, int(np.prod(lead, initial=1)), n, m, C)
    return _project(_heads_merge(out), p.wo)


def _layer_norm_nd(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return T.layer_norm(x, g, b, eps=1e-5)


def _feed_forward(x: Tensor, p: AttentionParams) -> Tensor:
    *lead, n, C = x.shape
    flat = T.reshape(x, (int(np.prod(lead, initial=1)) * n, C))
    h = T.gelu(T.affine(flat, p.ff1_w, p.ff1_b))
    out = T.affine(h, p.ff2_w, p.ff2_b)
    return T.reshape(out, (*lead, n, C))


def self_attention_block(x: Tensor, p: AttentionParams, stage: str = "self") -> Tensor:
    """Pre-norm residual self-attention followed by pre-norm feed-forward."""
    if x.shape[-1] != p.C:
        raise ShapeError(f"block expects {p.C} channels, got {x.shape}")
    normed = _layer_norm_nd(x, p.ln1_g, p.ln1_b)
    x = T.add(x, _attend(normed, normed, p, stage))
    return T.add(x, _feed_forward(_layer_norm_nd(x, p.ln2_g, p.ln2_b), p))


def cross_attention_block(q: Tensor, kv: Tensor, p: AttentionParams,
                          stage: str = "cross") -> Tensor:
    """As self_attention_block with a separate key/value source.

    Equivariant in query rows, invariant to kv row permutation. The first
    layer norm is shared between the query and kv streams.
    """
    if q.shape[-1] != p.C or kv.shape[-1] != p.C:
        raise ShapeError(f"block expects {p.C} channels, got q {q.shape}, kv {kv.shape}")
    if q.shape[:-2] != kv.shape[:-2]:
        raise ShapeError(f"batch dims differ: q {q.shape} vs kv {kv.shape}")
    qn = _layer_norm_nd(q, p.ln1_g, p.ln1_b)
    kn = _layer_norm_nd(kv, p.ln1_g, p.ln1_b)
    q = T.add(q, _attend(qn, kn, p, stage))
    return T.add(q, _feed_forward(_layer_norm_nd(q, p.ln2_g, p.ln2_b), p))


class IstaParams:
    """Three chained blocks: space, condition, time."""

    def __init__(self, C: int, heads: int, rng: np.random.Generator):
        self.space = AttentionParams(C, heads, rng)
        self.cond = AttentionParams(C, heads, rng)
        self.time = AttentionParams(C, heads, rng)

    def named(self, prefix: str) -> dict:
        out = {}
        out.update(self.space.named(f"{prefix}/space"))
        out.update(self.cond.named(f"{prefix}/cond"))
        out.update(self.time.named(f"{prefix}/time"))
        return out


def ista_block(d: Tensor, cond: Tensor, p: IstaParams) -> Tensor:
    """[T-1, M, C] codes: self-attention over codes within each frame, then
    cross-attention against that frame's condition codes, then self-attention
    over frames at each code index."""
    if d.ndim != 3 or cond.ndim != 3:
        raise ShapeError(f"ista block expects [T-1,M,C], got {d.shape} and {cond.shape}")
    if d.shape[0] != cond.shape[0]:
        raise ShapeError(f"frame count mismatch: {d.shape[0]} vs {cond.shape[0]}")
    x = self_attention_block(d, p.space, stage="space")
    x = cross_attention_block(x, cond, p.cond, stage="cond")
    x = T.transpose(x, (1, 0, 2))  # [M, T-1, C]
    x = self_attention_block(x, p.time, stage="time")
    return T.transpose(x, (1, 0, 2))


def full_spacetime_block(d: Tensor, p: AttentionParams) -> Tensor:
    """Baseline: one self-attention over all (T-1)*M tokens jointly."""
    t1, m, C = d.shape
    flat = T.reshape(d, (t1 * m, C))
    out = self_attention_block(flat, p, stage="full")
    return T.reshape(out, (t1, m, C))
