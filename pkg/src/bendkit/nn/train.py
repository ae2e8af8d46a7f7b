"""Optimizers and the mini-batch training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ConfigError, DataError
from .functional import mse_grad, mse_loss
from .graph import ModelGraph

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    # global-norm gradient clipping; None disables
    clip_norm: float | None = None
    # abort when a batch loss exceeds this or is non-finite; None disables
    divergence_threshold: float | None = None
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        self.optimizer = self.optimizer.lower()
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    head_losses: dict[str, list[float]] = field(default_factory=dict)
    steps: int = 0
    aborted: bool = False
    abort_reason: str | None = None

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


class Sgd:
    def __init__(self, params: dict[str, np.ndarray], learning_rate: float = 1e-2):
        self.params = params
        self.lr = learning_rate

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            self.params[k] -= self.lr * g


class Adam:
    def __init__(self, params: dict[str, np.ndarray], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = learning_rate, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(graph: ModelGraph, config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(graph.params, config.learning_rate)
    return Sgd(graph.params, config.learning_rate)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# (outputs, targets) -> (loss, d loss / d outputs)
LossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def mse_with_grad(pred, target):
    return mse_loss(pred, target), mse_grad(pred, target)


def _as_dict(data, names, what) -> dict[str, np.ndarray]:
    if isinstance(data, dict):
        return {k: np.asarray(v, dtype=np.float64) for k, v in data.items()}
    if len(names) != 1:
        raise ConfigError(f"graph has several {what}s {names}; pass a dict")
    return {names[0]: np.asarray(data, dtype=np.float64)}


def train(graph: ModelGraph, inputs, targets, config: TrainConfig,
          loss_weights: dict[str, float] | None = None,
          loss_fns: dict[str, LossFn] | None = None) -> TrainReport:
    """Mini-batch training, updating ``graph.params`` in place.

    ``inputs`` and ``targets`` hold one example per leading index, either as a
    single array or as dicts keyed by input/output node name. The total loss
    is the weighted sum of the per-output losses (MSE unless ``loss_fns``
    overrides an output). Batch order and dropout masks are drawn from
    generators seeded by ``config.seed``, so equal seeds replay exactly.
    """
    feeds = _as_dict(inputs, graph.input_names, "input")
    targs = _as_dict(targets, graph.outputs, "output")
    counts = {len(v) for v in feeds.values()} | {len(v) for v in targs.values()}
    if len(counts) != 1:
        raise DataError(f"inputs and targets disagree on example count: {sorted(counts)}")
    n = counts.pop()
    if n == 0:
        raise DataError("empty training set")
    weights = {o: 1.0 for o in graph.outputs}
    weights.update(loss_weights or {})
    loss_fns = loss_fns or {}

    report = TrainReport(head_losses={o: [] for o in graph.outputs})
    if config.epochs == 0:
        return report
    order_rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng([config.seed, 1])
    opt = make_optimizer(graph, config)
    last_good = graph.copy_params()

    for epoch in range(config.epochs):
        idx = order_rng.permutation(n) if config.shuffle else np.arange(n)
        total, heads = 0.0, {o: 0.0 for o in graph.outputs}
        for start in range(0, n, config.batch_size):
            bi = idx[start:start + config.batch_size]
            out = graph.forward({k: v[bi] for k, v in feeds.items()}, training=True, rng=drop_rng)
            if len(graph.outputs) == 1:
                out = {graph.outputs[0]: out}
            batch_loss, out_grads = 0.0, {}
            for o in graph.outputs:
                fn = loss_fns.get(o, mse_with_grad)
                loss, g = fn(out[o], targs[o][bi])
                heads[o] += loss * len(bi)
                batch_loss += weights[o] * loss
                out_grads[o] = weights[o] * g
            if config.divergence_threshold is not None and not (
                np.isfinite(batch_loss) and batch_loss <= config.divergence_threshold
            ):
                graph.load_params(last_good)
                report.aborted = True
                report.abort_reason = (
                    f"loss {batch_loss!r} at epoch {epoch}, step {report.steps}; "
                    f"parameters restored to end of epoch {epoch - 1}"
                )
                log.warning("training aborted: %s", report.abort_reason)
                return report
            grads = graph.backward(out_grads)
            if config.clip_norm is not None:
                clip_by_global_norm(grads, config.clip_norm)
            opt.step(grads)
            report.steps += 1
            total += batch_loss * len(bi)
        report.losses.append(total / n)
        for o in graph.outputs:
            report.head_losses[o].append(heads[o] / n)
        if config.divergence_threshold is not None:
            if not all(np.all(np.isfinite(p)) for p in graph.params.values()):
                graph.load_params(last_good)
                report.aborted = True
                report.abort_reason = f"non-finite parameters after epoch {epoch}"
                return report
            last_good = graph.copy_params()
        log.debug("epoch %d loss %.6g", epoch, report.losses[-1])
    return report
