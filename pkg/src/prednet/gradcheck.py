"""Central finite-difference verification of reverse-mode gradients.

The harness evaluates a user-supplied scalar loss twice per perturbed
element, so it is meant for float64 and small shapes. Relative error uses a
unit floor, |analytic - numeric| / max(|analytic|, |numeric|, 1), which keeps
finite-difference noise on near-zero gradients from registering as failure
while still catching wrong pullbacks, whose errors scale with activations.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tape import Tape, Value


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Elementwise central differences of ``f`` with respect to ``x``.

    ``f`` must read ``x`` afresh on each call; ``x`` is restored afterwards.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    make_loss: Callable[[], Value],
    wrt: Sequence[Value],
    step: float = 1e-5,
) -> float:
    """Compare taped gradients of ``make_loss()`` against central differences.

    ``make_loss`` is called once under a fresh tape for the analytic
    gradients and repeatedly outside any tape for the numeric ones. Inputs
    should be float64. Returns the max relative error over all elements of
    all ``wrt`` nodes.
    """
    with Tape() as tape:
        loss = make_loss()
    tape.backward(loss)
    analytic = [
        v.grad if v.grad is not None else np.zeros_like(v.data) for v in wrt
    ]

    def f() -> float:
        return float(make_loss().data)

    worst = 0.0
    for v, a in zip(wrt, analytic):
        n = numeric_gradient(f, v.data, step=step)
        worst = max(worst, max_relative_error(a, n))
    return worst
