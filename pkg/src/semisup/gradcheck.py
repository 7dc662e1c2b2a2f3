"""Central finite-difference checks for graph-built scalar losses."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).

    The floor keeps entries whose true derivative is ~0 from dividing
    round-off by round-off.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(loss_fn: Callable[[], ad.Tensor], leaf: ad.Tensor, eps: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(leaf.values)
    flat = leaf.values.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        with ad.no_grad():
            up = loss_fn().item()
        flat[i] = orig - eps
        with ad.no_grad():
            down = loss_fn().item()
        flat[i] = orig
        g[i] = (up - down) / (2 * eps)
    return grad


def analytic_grad(loss_fn: Callable[[], ad.Tensor], leaves: Sequence[ad.Tensor]) -> list[np.ndarray]:
    for p in leaves:
        p.requires_grad = True
    ad.zero_grad(leaves)
    ad.new_graph()
    loss = loss_fn()
    ad.backward(loss)
    out = [p.grad.copy() for p in leaves]
    ad.zero_grad(leaves)
    return out


def check(loss_fn: Callable[[], ad.Tensor], leaves: Sequence[ad.Tensor], eps: float = 1e-5) -> float:
    """Worst relative error between backward and central differences over all leaves."""
    analytic = analytic_grad(loss_fn, leaves)
    return max(relative_error(a, numeric_grad(loss_fn, p, eps)) for a, p in zip(analytic, leaves))
