"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .core import Tensor, backward, no_grad

# denominator floor of the relative error; keeps near-zero gradients from
# turning float64 round-off (~1e-11) into spurious failures
REL_FLOOR = 1e-6


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradcheck(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Largest relative error between backprop and central differences.

    ``fn`` rebuilds the scalar loss from the current values of ``params``
    (it is called once for backprop and twice per probed coordinate).  With
    ``max_coords`` only that many randomly chosen coordinates per parameter are
    probed.
    """
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for p, grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            for idx in coords:
                orig = flat[idx]
                flat[idx] = orig + eps
                up = fn().item()
                flat[idx] = orig - eps
                down = fn().item()
                flat[idx] = orig
                numeric = (up - down) / (2 * eps)
                worst = max(worst, float(relative_error(grad.reshape(-1)[idx], numeric)))
    return worst
