import numpy as np
import pytest

import dynsurf.tensor as T
from dynsurf.checkpoint import (CheckpointError, load_checkpoint,
                                restore_params, save_checkpoint)
from dynsurf.optim import Adam
from dynsurf.tensor import Tensor


def reference_adam_trace(x0, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Straight-from-the-definition Adam, kept independent of the library."""
    x = x0.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x = x - lr * mh / (np.sqrt(vh) + eps)
        out.append(x.copy())
    return out


def test_adam_matches_reference(rng):
    x0 = rng.standard_normal((3, 2))
    grads = [rng.standard_normal((3, 2)) for _ in range(7)]
    p = Tensor(x0.copy(), requires_grad=True)
    opt = Adam({"p": p}, lr=0.05)
    want = reference_adam_trace(x0, grads, lr=0.05)
    for g, w in zip(grads, want):
        opt.zero_grad()
        p.grad = g.copy()
        opt.step()
        assert np.allclose(p.data, w, atol=1e-12)


def test_adam_converges_on_quadratic(rng):
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        loss = T.tsum(T.mul(p, p))
        loss.backward()
        opt.step()
    assert np.abs(p.data).max() < 1e-3


def test_adam_skips_missing_grads():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    opt = Adam({"a": a, "b": b}, lr=0.1)
    a.grad = np.ones(2)
    opt.step()
    assert not np.array_equal(a.data, np.ones(2))
    assert np.array_equal(b.data, np.ones(2))


def test_adam_rejects_bad_lr():
    with pytest.raises(ValueError):
        Adam({"p": Tensor(np.ones(1), requires_grad=True)}, lr=0.0)


def test_checkpoint_roundtrip_is_byte_exact(tmp_path, rng):
    params = {
        "enc/w": Tensor(rng.standard_normal((4, 3)).astype(np.float32)),
        "enc/b": Tensor(rng.standard_normal(3).astype(np.float32)),
        "dec/w": Tensor(rng.standard_normal((3, 5)).astype(np.float32)),
    }
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, "toy", params)
    model_id, loaded = load_checkpoint(p1)
    assert model_id == "toy"
    assert list(loaded) == list(params)  # manifest preserves insertion order
    for k in params:
        assert np.array_equal(loaded[k], params[k].numpy())
    save_checkpoint(p2, "toy", {k: loaded[k] for k in loaded})
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_restore_into_model(tmp_path, rng):
    src = {"w": Tensor(rng.standard_normal((2, 2)).astype(np.float32))}
    save_checkpoint(tmp_path / "m.ckpt", "m", src)
    _, loaded = load_checkpoint(tmp_path / "m.ckpt")
    dst = {"w": Tensor(np.zeros((2, 2), dtype=np.float32), requires_grad=True)}
    restore_params(dst, loaded)
    assert np.array_equal(dst["w"].numpy(), src["w"].numpy())
    bad = {"w": Tensor(np.zeros((3, 3), dtype=np.float32))}
    with pytest.raises(CheckpointError):
        restore_params(bad, loaded)


def test_checkpoint_rejects_corruption(tmp_path, rng):
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, "m", {"w": Tensor(np.ones((2, 2), dtype=np.float32))})
    raw = path.read_bytes()
    (tmp_path / "magic.ckpt").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "magic.ckpt")
    (tmp_path / "trail.ckpt").write_bytes(raw + b"\x00\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trail.ckpt")
    (tmp_path / "trunc.ckpt").write_bytes(raw[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trunc.ckpt")
