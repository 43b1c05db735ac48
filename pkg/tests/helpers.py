"""Shared test utilities: the central finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np

from nlfv import tensor as T


def numeric_gradient(fn, arrays: list[np.ndarray], wrt: int, step: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar ``fn(arrays) -> float`` wrt one input.

    Evaluates the forward pass only; it knows nothing about the analytic
    backward it is checking.
    """
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[wrt], dtype=np.float64)
    flat = base[wrt].reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(base)
        flat[i] = orig - step
        lo = fn(base)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def check_gradients(build, arrays: list[np.ndarray], tol: float = 1e-3, step: float = 1e-3):
    """Compare analytic gradients of a taped scalar against finite differences.

    ``build(tensors) -> scalar Tensor`` constructs the computation from leaf
    tensors made out of ``arrays``.  Every input is checked; the comparison is
    ``|analytic - numeric| / max(1, |numeric|) < tol`` elementwise.
    """
    leaves = [T.parameter(a) for a in arrays]
    with T.Graph() as g:
        loss = build(leaves)
    T.backward(loss, g)

    def forward_only(arr_list):
        consts = [T.Tensor(a) for a in arr_list]
        return build(consts).item()

    for i, leaf in enumerate(leaves):
        numeric = numeric_gradient(forward_only, arrays, i, step=step)
        analytic = np.zeros_like(arrays[i]) if leaf.grad is None else leaf.grad
        denom = np.maximum(1.0, np.abs(numeric))
        err = np.abs(analytic.astype(np.float64) - numeric) / denom
        assert err.max() < tol, (
            f"gradient mismatch on input {i}: max rel err {err.max():.2e} "
            f"(analytic {analytic.ravel()[err.argmax()]:.6g}, "
            f"numeric {numeric.ravel()[err.argmax()]:.6g})"
        )
