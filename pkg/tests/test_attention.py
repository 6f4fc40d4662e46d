import numpy as np
import pytest

import dynsurf.tensor as T
from dynsurf.attention import (AttentionParams, IstaParams, PosEmbedParams,
                               count_flops, cross_attention_block, flops_count,
                               full_spacetime_block, ista_block,
                               positional_embedding, self_attention_block,
                               sinusoid_features)
from dynsurf.tensor import ShapeError, Tensor

from conftest import check_gradients


def _params(C=8, heads=2, seed=0):
    return AttentionParams(C, heads, np.random.default_rng(seed))


def test_attention_params_reject_bad_head_split():
    with pytest.raises(ShapeError):
        AttentionParams(6, 4, np.random.default_rng(0))


def test_sinusoid_features_origin_and_shape():
    f = sinusoid_features(np.zeros((5, 3)))
    assert f.shape == (5, 48)
    # sin(0) = 0 for the first 8 features of each axis, cos(0) = 1 after
    per_axis = f.reshape(5, 3, 16)
    assert np.allclose(per_axis[:, :, :8], 0.0)
    assert np.allclose(per_axis[:, :, 8:], 1.0)


def test_positional_embedding_equal_points_equal_rows(rng):
    p = PosEmbedParams(8, rng)
    pts = rng.normal(size=(4, 3))
    pts[2] = pts[0]
    emb = positional_embedding(pts, p).numpy()
    assert np.array_equal(emb[2], emb[0])
    assert not np.allclose(emb[1], emb[0])


def test_positional_embedding_rejects_non_points(rng):
    with pytest.raises(ShapeError):
        positional_embedding(np.zeros((4, 2)), PosEmbedParams(8, rng))


def test_self_attention_permutation_equivariant(rng):
    p = _params()
    x = rng.normal(size=(6, 8))
    perm = rng.permutation(6)
    out = self_attention_block(Tensor(x), p).numpy()
    out_p = self_attention_block(Tensor(x[perm]), p).numpy()
    assert np.allclose(out_p, out[perm], atol=1e-12)


def test_cross_attention_kv_permutation_invariant(rng):
    p = _params()
    q = rng.normal(size=(5, 8))
    kv = rng.normal(size=(7, 8))
    perm = rng.permutation(7)
    a = cross_attention_block(Tensor(q), Tensor(kv), p).numpy()
    b = cross_attention_block(Tensor(q), Tensor(kv[perm]), p).numpy()
    assert np.allclose(a, b, atol=1e-12)


def test_cross_attention_query_rows_independent(rng):
    # each query row attends on its own; permuting queries permutes outputs
    p = _params()
    q = rng.normal(size=(5, 8))
    kv = rng.normal(size=(4, 8))
    perm = rng.permutation(5)
    a = cross_attention_block(Tensor(q), Tensor(kv), p).numpy()
    b = cross_attention_block(Tensor(q[perm]), Tensor(kv), p).numpy()
    assert np.allclose(b, a[perm], atol=1e-12)


def test_cross_attention_rejects_batch_mismatch(rng):
    p = _params()
    with pytest.raises(ShapeError):
        cross_attention_block(Tensor(rng.normal(size=(2, 5, 8))),
                              Tensor(rng.normal(size=(3, 4, 8))), p)


def test_ista_block_matches_composed_blocks(rng):
    p = IstaParams(8, 2, np.random.default_rng(3))
    d = Tensor(rng.normal(size=(4, 6, 8)))
    cond = Tensor(rng.normal(size=(4, 5, 8)))
    got = ista_block(d, cond, p).numpy()

    x = self_attention_block(d, p.space)
    x = cross_attention_block(x, cond, p.cond)
    x = T.transpose(x, (1, 0, 2))
    x = self_attention_block(x, p.time)
    want = T.transpose(x, (1, 0, 2)).numpy()
    assert np.array_equal(got, want)


def test_ista_block_rejects_frame_mismatch(rng):
    p = IstaParams(8, 2, np.random.default_rng(3))
    with pytest.raises(ShapeError):
        ista_block(Tensor(rng.normal(size=(4, 6, 8))),
                   Tensor(rng.normal(size=(3, 5, 8))), p)


def test_flops_ratio_exact_at_16_16():
    ista = flops_count(16, 16, 32, "ista")
    full = flops_count(16, 16, 32, "full")
    assert ista.total / full.total == 0.125


def test_flops_count_rejects_bad_args():
    with pytest.raises(ValueError):
        flops_count(0, 16, 32, "ista")
    with pytest.raises(ValueError):
        flops_count(4, 4, 8, "spiral")


def test_runtime_counter_matches_analytic_ista(rng):
    Tn, M, C = 5, 6, 8
    p = IstaParams(C, 2, np.random.default_rng(1))
    d = Tensor(rng.normal(size=(Tn, M, C)))
    cond = Tensor(rng.normal(size=(Tn, M, C)))
    with count_flops() as fc:
        ista_block(d, cond, p)
    # the claim covers space and time attention only; cond is common to
    # both regimes and excluded
    got = fc.total(stages=("space", "time"))
    assert got == flops_count(Tn, M, C, "ista").total


def test_runtime_counter_matches_analytic_full(rng):
    Tn, M, C = 5, 6, 8
    p = _params(C, 2)
    d = Tensor(rng.normal(size=(Tn, M, C)))
    with count_flops() as fc:
        full_spacetime_block(d, p)
    assert fc.total(stages=("full",)) == flops_count(Tn, M, C, "full").total


def test_counter_inactive_outside_context(rng):
    p = _params()
    with count_flops() as fc:
        pass
    self_attention_block(Tensor(rng.normal(size=(3, 8))), p)
    assert fc.total() == 0


def test_self_attention_gradients(rng):
    p = _params(C=4, heads=2, seed=5)

    def loss(ts):
        return T.tsum(self_attention_block(ts[0], p))

    check_gradients(loss, [rng.normal(size=(3, 4))])


def test_cross_attention_gradients(rng):
    p = _params(C=4, heads=2, seed=6)

    def loss(ts):
        return T.tsum(cross_attention_block(ts[0], ts[1], p))

    check_gradients(loss, [rng.normal(size=(3, 4)), rng.normal(size=(2, 4))])
