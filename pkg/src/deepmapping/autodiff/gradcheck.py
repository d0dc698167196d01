"""Central finite-difference gradient checks for the tape engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as ops
from .tensor import Tensor, backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a|| + ||n||, 1e-12)`` over the checked entries."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return diff / max(scale, 1e-12)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray | Tensor], eps: float = 1e-6,
                    seed: int = 0, max_coords: int | None = None) -> float:
    """Largest relative error between backprop and central differences.

    ``fn`` maps Tensors to a Tensor of any shape; it is reduced to a scalar
    with a fixed random projection so every output entry contributes.
    Tensor inputs are checked in place (their ``data`` is perturbed and
    restored), which lets callers check network parameters directly.
    ``max_coords`` limits the number of perturbed entries per input.
    """
    rng = np.random.default_rng(seed)
    tensors = [x if isinstance(x, Tensor) else Tensor(np.array(x, dtype=np.float64), requires_grad=True)
               for x in inputs]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with no_grad():
        out_shape = fn(*tensors).shape
    proj = rng.standard_normal(out_shape)

    def scalar() -> Tensor:
        return ops.sum(ops.mul(fn(*tensors), proj))

    backward(scalar())
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        numeric = np.empty(len(coords))
        with no_grad():
            for j, c in enumerate(coords):
                orig = flat[c]
                flat[c] = orig + eps
                up = scalar().item()
                flat[c] = orig - eps
                down = scalar().item()
                flat[c] = orig
                numeric[j] = (up - down) / (2.0 * eps)
        worst = max(worst, relative_error(analytic.reshape(-1)[coords], numeric))
        t.grad = None
    return worst
