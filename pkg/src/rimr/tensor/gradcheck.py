"""Central finite-difference gradient checking (use under 64-bit dtype)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, backward


def numerical_grad(f: Callable[[], Tensor], x: Tensor, step: float = 1e-6,
                   indices: np.ndarray | None = None) -> np.ndarray:
    """Central differences at every flat index of ``x``, or only at ``indices`` (others stay 0)."""
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + step
        plus = float(f().data)
        flat[i] = orig - step
        minus = float(f().data)
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, scale: float = 0.0) -> float:
    """max |a - n| scaled by the larger gradient magnitude (floored at ``scale`` and 1e-8)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), scale, 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-6,
                    per_input: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Worst relative error between backprop and central differences over ``inputs``.

    Errors are scaled by the largest gradient over all inputs, so an input whose
    true gradient is zero (a bias feeding batch norm) is not judged on round-off.
    With ``per_input`` only that many random coordinates of each input are
    differenced; the analytic gradient is compared at those coordinates only.
    """
    for x in inputs:
        x.grad = None
    backward(f())
    rng = rng if rng is not None else np.random.default_rng(0)
    pairs = []
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        if per_input is None or per_input >= x.data.size:
            pairs.append((analytic, numerical_grad(f, x, step)))
            continue
        idx = np.sort(rng.choice(x.data.size, per_input, replace=False))
        numeric = numerical_grad(f, x, step, idx).reshape(-1)[idx]
        pairs.append((analytic.reshape(-1)[idx], numeric))
    scale = max((max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0)) for a, n in pairs), default=0.0)
    return max((relative_error(a, n, scale) for a, n in pairs), default=0.0)
