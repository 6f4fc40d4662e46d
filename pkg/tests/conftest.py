"""Shared test helpers: finite-difference gradient checking and the
acceptance-criteria result banner."""

import numpy as np
import pytest

ACCEPTANCE_RESULTS = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_RESULTS.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line("  " + line)


# -- gradient checking ------------------------------------------------------


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a.ravel())
    nb = np.linalg.norm(b.ravel())
    return float(np.linalg.norm((a - b).ravel()) / max(na, nb, 1e-8))


def check_gradients(build_loss, arrays, tol: float = 1e-4, eps: float = 1e-6):
    """build_loss(list of Tensors) -> scalar Tensor.

    Compares reverse-mode gradients of every input against central
    differences; asserts the norm-wise relative error is below tol.
    """
    from dynsurf.tensor import Tensor

    tensors = [Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)
               for a in arrays]
    loss = build_loss(tensors)
    loss.backward()
    errs = []
    for k, t in enumerate(tensors):
        assert t.grad is not None, f"input {k} received no gradient"

        def f(x, k=k):
            probe = [Tensor(np.asarray(a, dtype=np.float64)) for a in arrays]
            probe[k] = Tensor(np.asarray(x, dtype=np.float64))
            return float(build_loss(probe).item())

        num = numeric_grad(f, np.asarray(arrays[k], dtype=np.float64).copy(), eps)
        e = rel_err(t.grad, num)
        errs.append(e)
        assert e < tol, f"input {k}: gradient relative error {e:.3e} >= {tol}"
    return errs


@pytest.fixture
def rng():
    return np.random.default_rng(0)
