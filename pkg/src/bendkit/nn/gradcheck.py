"""Central finite-difference checks for graph gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[], float], param: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """d f / d param by central differences, perturbing ``param`` in place."""
    grad = np.zeros_like(param)
    flat, gflat = param.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest relative error; pairs below ``floor`` in magnitude compare absolutely."""
    a, n = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    scale = np.maximum(np.abs(a), np.abs(n))
    diff = np.abs(a - n)
    big = scale >= floor
    rel = np.where(big, diff / np.where(big, scale, 1.0), 0.0)
    # both tiny: a pass is a difference below the floor itself
    tiny_fail = (~big) & (diff >= floor)
    return float(max(rel.max(initial=0.0), 1.0 if tiny_fail.any() else 0.0))


def check_graph(graph, loss: Callable[[], float], analytic: dict[str, np.ndarray],
                step: float = 1e-5) -> dict[str, float]:
    """Compare ``analytic`` gradients against central differences of ``loss``.

    ``loss`` must re-run the forward pass from ``graph.params`` each call.
    Returns the worst relative error per parameter name.
    """
    return {
        name: max_rel_error(analytic[name], numeric_grad(loss, graph.params[name], step))
        for name in graph.params
    }
