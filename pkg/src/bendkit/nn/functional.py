"""Stateless building blocks of the network engine.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Batched inputs
put the batch on the leading axes and features on the last axis.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigError, DimensionError

ACTIVATIONS = ("tanh", "relu", "sigmoid", "linear")


def check_activation(name: str) -> str:
    name = name.lower()
    if name not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")
    return name


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(x: np.ndarray, name: str) -> np.ndarray:
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return sigmoid(np.asarray(x, dtype=np.float64))
    if name == "linear":
        return x
    raise ConfigError(f"unknown activation {name!r}")


def activation_grad(y: np.ndarray, name: str) -> np.ndarray:
    """Derivative of the activation expressed through its output ``y``."""
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (y > 0).astype(np.float64)
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "linear":
        return np.ones_like(y)
    raise ConfigError(f"unknown activation {name!r}")


def dense_forward(input, weights, bias, activation: str = "linear") -> np.ndarray:
    """``activation(weights @ input + bias)`` over the last axis of ``input``."""
    x = np.asarray(input, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    if w.ndim != 2 or x.shape[-1:] != w.shape[1:] or b.shape != (w.shape[0],):
        raise DimensionError(
            f"dense shape mismatch: input {x.shape}, weights {w.shape}, bias {b.shape}"
        )
    return activate(x @ w.T + b, check_activation(activation))


def concat(inputs: Sequence[np.ndarray]) -> np.ndarray:
    if len(inputs) < 2:
        raise DimensionError(f"concat needs at least 2 inputs, got {len(inputs)}")
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    for a in arrays:
        if a.ndim == 0 or a.shape[-1] == 0:
            raise DimensionError(f"concat operand with shape {a.shape} is empty")
    lead = arrays[0].shape[:-1]
    if any(a.shape[:-1] != lead for a in arrays):
        raise DimensionError(f"concat leading shapes differ: {[a.shape for a in arrays]}")
    return np.concatenate(arrays, axis=-1)


def dropout_mask(shape, drop_rate: float, rng: np.random.Generator) -> np.ndarray:
    keep = rng.random(shape) >= drop_rate
    return keep / (1.0 - drop_rate)


def dropout_forward(input, drop_rate: float, mode: str = "infer", rng=None) -> np.ndarray:
    """Inverted dropout. ``mode`` is ``"train"`` or ``"infer"``."""
    if not 0.0 <= drop_rate < 1.0:
        raise ConfigError(f"drop_rate must be in [0, 1), got {drop_rate}")
    x = np.asarray(input, dtype=np.float64)
    if mode == "infer" or drop_rate == 0.0:
        return x
    if mode != "train":
        raise ConfigError(f"unknown dropout mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng()
    return x * dropout_mask(x.shape, drop_rate, rng)


def gru_step(input, hidden, W, U, b) -> np.ndarray:
    """One gated-recurrent-unit update.

    ``W`` is ``(3H, in)``, ``U`` is ``(3H, H)`` and ``b`` is ``(3H,)``, each
    stacked in gate order update, reset, candidate::

        z  = sigmoid(Wz x + Uz h + bz)
        r  = sigmoid(Wr x + Ur h + br)
        hc = tanh(Wh x + Uh (r * h) + bh)
        h' = z * h + (1 - z) * hc
    """
    x = np.asarray(input, dtype=np.float64)
    h = np.asarray(hidden, dtype=np.float64)
    H = h.shape[-1]
    if W.shape[0] != 3 * H or U.shape != (3 * H, H) or b.shape != (3 * H,) or x.shape[-1] != W.shape[1]:
        raise DimensionError(
            f"gru shape mismatch: input {x.shape}, hidden {h.shape}, W {W.shape}, U {U.shape}, b {b.shape}"
        )
    xw = x @ W.T + b
    z = sigmoid(xw[..., :H] + h @ U[:H].T)
    r = sigmoid(xw[..., H:2 * H] + h @ U[H:2 * H].T)
    hc = np.tanh(xw[..., 2 * H:] + (r * h) @ U[2 * H:].T)
    return z * h + (1.0 - z) * hc


def mse_loss(predicted, target) -> float:
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"mse shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise DimensionError("mse of empty tensors")
    d = p - t
    return float(np.mean(d * d))


def mse_grad(predicted, target) -> np.ndarray:
    p = np.asarray(predicted, dtype=np.float64)
    return 2.0 * (p - target) / p.size
