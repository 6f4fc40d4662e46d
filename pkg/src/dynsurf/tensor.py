"""Dense tensor engine with reverse-mode differentiation.

A dynamic tape: every operation returns a new ``Tensor`` that remembers its
parents and a closure propagating the upstream gradient.  Tensors are
immutable after creation except for gradient accumulation.  Broadcasting is
restricted to scalar-with-tensor; anything else goes through explicit
``reshape`` / ``expand``.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "no_grad",
    "set_default_dtype",
    "get_default_dtype",
    "set_debug_checks",
    "tensor",
    "zeros",
    "randn",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "gelu",
    "exp",
    "log",
    "sigmoid",
    "matmul",
    "affine",
    "softmax_lastdim",
    "layer_norm",
    "reshape",
    "transpose",
    "concat",
    "expand",
    "tsum",
    "tmean",
    "bce_with_logits",
    "backward",
]

_DEFAULT_DTYPE = np.float64
_DEBUG_CHECKS = os.environ.get("DYNSURF_DEBUG", "0") not in ("0", "", "false")
_GRAD_ENABLED = True

_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class NumericError(RuntimeError):
    """Non-finite value detected (debug mode) or numeric abort."""


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors (float32 or float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_debug_checks(on: bool) -> None:
    """Toggle non-finite detection on every op output."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(on)


class no_grad:
    """Context manager suppressing tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """N-dimensional array node in an acyclic operation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else scale_add(self, float(other))

    def __radd__(self, other):
        return scale_add(self, float(other))

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else scale_add(self, -float(other))

    def __rsub__(self, other):
        return scale_add(scale(self, -1.0), float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad=requires_grad)


def randn(shape, rng: np.random.Generator, std: float = 1.0, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = rng.standard_normal(shape) * std
    return Tensor(arr.astype(dtype or _DEFAULT_DTYPE), requires_grad=requires_grad)


def _make(out_data: np.ndarray, parents, backward_fn) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(out_data)):
        raise NumericError("non-finite value produced by tensor operation")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _make(a.data * s, (a,), bwd)


def scale_add(a: Tensor, s: float) -> Tensor:
    """a + s for a Python scalar s."""
    s = float(s)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)

    return _make(a.data + s, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), bwd)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Hard clip; gradient is zero outside [lo, hi]."""
    mask = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(np.clip(a.data, lo, hi), (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    # exact erf form; derivative = Phi(x) + x * phi(x)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))

    def bwd(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
            a._accumulate(g * (cdf + x * pdf))

    return _make(x * cdf, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _make(out_data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log: input must be strictly positive")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.  2-D operands, or stacked 3-D+ with equal batch dims."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for shapes {ad.shape} and {bd.shape}")
    if ad.ndim != bd.ndim or ad.shape[:-2] != bd.shape[:-2]:
        if not (ad.ndim == 2 and bd.ndim == 2):
            raise ShapeError(f"matmul: batch dims differ for shapes {ad.shape} and {bd.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(bd, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(ad, -1, -2) @ g)

    return _make(ad @ bd, (a, b), bwd)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b of shape [out] broadcast over leading dims."""
    xd, wd, bd = x.data, w.data, b.data
    if xd.shape[-1] != wd.shape[0]:
        raise ShapeError(f"affine: input dim {xd.shape} does not match weight {wd.shape}")
    if bd.shape != (wd.shape[1],):
        raise ShapeError(f"affine: bias shape {bd.shape} does not match weight {wd.shape}")
    out_data = xd @ wd + bd

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ wd.T)
        if w.requires_grad:
            w._accumulate(xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
        if b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out_data, (x, w, b), bwd)


def softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=-1, keepdims=True)
            a._accumulate(out_data * (g - dot))

    return _make(out_data, (a,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if eps < 0:
        raise ValueError("layer_norm: eps must be >= 0")
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.data.shape}/{beta.data.shape} do not match feature dim {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def bwd(g):
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, c).sum(axis=0))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, c).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (dxhat - m1 - xhat * m2))

    return _make(out_data, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast to ``shape``; backward sums over the expanded axes."""
    shape = tuple(shape)
    out_data = np.broadcast_to(a.data, shape).copy()

    def bwd(g):
        if a.requires_grad:
            extra = g.ndim - a.data.ndim
            axes = tuple(range(extra)) + tuple(
                i + extra for i, n in enumerate(a.data.shape) if n == 1 and shape[i + extra] != 1
            )
            a._accumulate(g.sum(axis=axes).reshape(a.data.shape) if axes else g.reshape(a.data.shape))

    return _make(out_data, (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.full_like(a.data, g if np.ndim(g) == 0 else g.reshape(())))
            else:
                gx = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gx, a.data.shape).copy())

    return _make(np.asarray(out_data), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# composed losses


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy over all elements, numerically stable.

    loss_i = max(z,0) - z*y + log(1 + exp(-|z|)), with y treated as constant.
    """
    if isinstance(targets, Tensor):
        y = Tensor(targets.data.astype(logits.data.dtype, copy=False))
    else:
        y = Tensor(np.asarray(targets, dtype=logits.data.dtype))
    neg_abs = scale(add(relu(logits), relu(scale(logits, -1.0))), -1.0)
    per = add(sub(relu(logits), mul(logits, y)), log(scale_add(exp(neg_abs), 1.0)))
    return tmean(per)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients accumulate into ``.grad`` of every reachable leaf with
    ``requires_grad``; repeated calls without zeroing keep accumulating.
    Interior-node grads are transient per sweep.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")

    # post-order DFS: producers appended before consumers
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in topo:
        if node._backward is not None:
            node.grad = None
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
