"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


class AdamState:
    """Per-parameter first/second moment buffers plus a step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("Adam: lr must be > 0")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState(params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """Bias-corrected Adam update; parameters with no grad are skipped."""
        st = self.state
        st.step_count += 1
        t = st.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"Adam: grad shape {g.shape} does not match parameter {k} shape {p.data.shape}")
            m = st.m[k]
            v = st.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
