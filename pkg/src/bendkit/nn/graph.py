"""Computation graph of layers with reverse-mode differentiation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError, StateError
from .functional import (
    activate,
    activation_grad,
    check_activation,
    dropout_mask,
    sigmoid,
)

KINDS = ("input", "dense", "dropout", "gru", "concat")


@dataclass
class LayerSpec:
    """One node of a :class:`ModelGraph`.

    ``width`` is the node's output extent on the last axis. Dropout and
    concat derive it from their inputs.
    """

    kind: str
    name: str
    inputs: list[str] = field(default_factory=list)
    width: int = 0
    activation: str = "linear"
    drop_rate: float = 0.0
    return_sequences: bool = True

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "inputs": list(self.inputs),
            "width": self.width,
            "activation": self.activation,
            "drop_rate": self.drop_rate,
            "return_sequences": self.return_sequences,
        }


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelGraph:
    """A DAG of layers over named inputs.

    Nodes are kept in insertion order, which is always a topological order
    because a node may only reference nodes added before it. Parameters are
    created at insertion time from a generator seeded with ``seed``, so two
    graphs built by the same calls with the same seed are bitwise equal.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.nodes: dict[str, LayerSpec] = {}
        self.params: dict[str, np.ndarray] = {}
        self.outputs: list[str] = []
        self._rng = np.random.default_rng(self.seed)
        self._tape: dict | None = None
        self.final_states: dict[str, np.ndarray] = {}

    # construction

    def _add(self, spec: LayerSpec) -> str:
        if spec.name in self.nodes:
            raise ConfigError(f"duplicate node name {spec.name!r}")
        for src in spec.inputs:
            if src not in self.nodes:
                raise ConfigError(f"node {spec.name!r} references unknown input {src!r}")
        self.nodes[spec.name] = spec
        return spec.name

    def _auto_name(self, kind: str) -> str:
        n = sum(1 for s in self.nodes.values() if s.kind == kind)
        return f"{kind}_{n}"

    def width_of(self, name: str) -> int:
        return self.nodes[name].width

    def add_input(self, name: str, width: int) -> str:
        if width < 1:
            raise ConfigError(f"input {name!r} needs width >= 1")
        return self._add(LayerSpec("input", name, [], int(width)))

    def add_dense(self, src: str, width: int, activation: str = "linear", name: str | None = None) -> str:
        if width < 1:
            raise ConfigError(f"dense width must be >= 1, got {width}")
        name = name or self._auto_name("dense")
        spec = LayerSpec("dense", name, [src], int(width), check_activation(activation))
        self._add(spec)
        fan_in = self.width_of(src)
        self.params[f"{name}.W"] = glorot(self._rng, fan_in, width, (width, fan_in))
        self.params[f"{name}.b"] = np.zeros(width)
        return name

    def add_dropout(self, src: str, drop_rate: float, name: str | None = None) -> str:
        if not 0.0 <= drop_rate < 1.0:
            raise ConfigError(f"drop_rate must be in [0, 1), got {drop_rate}")
        name = name or self._auto_name("dropout")
        return self._add(LayerSpec("dropout", name, [src], self.width_of(src), drop_rate=float(drop_rate)))

    def add_gru(self, src: str, width: int, return_sequences: bool = True, name: str | None = None) -> str:
        if width < 1:
            raise ConfigError(f"gru width must be >= 1, got {width}")
        name = name or self._auto_name("gru")
        spec = LayerSpec("gru", name, [src], int(width), "tanh", return_sequences=bool(return_sequences))
        self._add(spec)
        fan_in = self.width_of(src)
        H = int(width)
        self.params[f"{name}.W"] = np.concatenate(
            [glorot(self._rng, fan_in, H, (H, fan_in)) for _ in range(3)]
        )
        self.params[f"{name}.U"] = np.concatenate([glorot(self._rng, H, H, (H, H)) for _ in range(3)])
        self.params[f"{name}.b"] = np.zeros(3 * H)
        return name

    def add_concat(self, srcs: list[str], name: str | None = None) -> str:
        if len(srcs) < 2:
            raise ConfigError(f"concat needs at least 2 inputs, got {len(srcs)}")
        name = name or self._auto_name("concat")
        width = sum(self.width_of(s) for s in srcs)
        return self._add(LayerSpec("concat", name, list(srcs), width))

    def set_outputs(self, names) -> None:
        if isinstance(names, str):
            names = [names]
        for n in names:
            if n not in self.nodes:
                raise ConfigError(f"unknown output node {n!r}")
        self.outputs = list(names)

    @property
    def input_names(self) -> list[str]:
        return [n for n, s in self.nodes.items() if s.kind == "input"]

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def to_spec(self) -> dict:
        return {
            "seed": self.seed,
            "nodes": [s.to_dict() for s in self.nodes.values()],
            "outputs": list(self.outputs),
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "ModelGraph":
        g = cls(seed=spec["seed"])
        for d in spec["nodes"]:
            kind = d["kind"]
            if kind == "input":
                g.add_input(d["name"], d["width"])
            elif kind == "dense":
                g.add_dense(d["inputs"][0], d["width"], d["activation"], name=d["name"])
            elif kind == "dropout":
                g.add_dropout(d["inputs"][0], d["drop_rate"], name=d["name"])
            elif kind == "gru":
                g.add_gru(d["inputs"][0], d["width"], d["return_sequences"], name=d["name"])
            elif kind == "concat":
                g.add_concat(d["inputs"], name=d["name"])
            else:
                raise ConfigError(f"unknown layer kind {kind!r}")
        g.set_outputs(spec["outputs"])
        return g

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k, v in params.items():
            if k not in self.params or self.params[k].shape != v.shape:
                raise DimensionError(f"parameter {k!r} does not fit this graph")
            self.params[k][...] = v

    # forward / backward

    def _feeds(self, feeds) -> dict[str, np.ndarray]:
        names = self.input_names
        if not isinstance(feeds, dict):
            if len(names) != 1:
                raise ConfigError(f"graph has inputs {names}; pass a dict")
            feeds = {names[0]: feeds}
        out = {}
        for n in names:
            if n not in feeds:
                raise ConfigError(f"missing feed for input {n!r}")
            x = np.asarray(feeds[n], dtype=np.float64)
            if x.shape[-1:] != (self.nodes[n].width,):
                raise DimensionError(f"input {n!r} expects last extent {self.nodes[n].width}, got shape {x.shape}")
            out[n] = x
        return out

    def forward(self, feeds, training: bool = False, rng: np.random.Generator | None = None,
                states: dict[str, np.ndarray] | None = None):
        """Evaluate the graph and record a tape for :meth:`backward`.

        ``states`` optionally gives initial hidden states for GRU nodes; the
        final states of every GRU node are left in ``final_states``.
        Returns the single output array, or a dict when there are several.
        """
        if not self.outputs:
            raise StateError("graph has no outputs")
        values = dict(self._feeds(feeds))
        caches: dict[str, object] = {}
        states = states or {}
        self.final_states = {}
        for name, spec in self.nodes.items():
            if spec.kind == "input":
                continue
            xs = [values[s] for s in spec.inputs]
            if spec.kind == "dense":
                W, b = self.params[f"{name}.W"], self.params[f"{name}.b"]
                y = activate(xs[0] @ W.T + b, spec.activation)
                caches[name] = y
            elif spec.kind == "dropout":
                if training and spec.drop_rate > 0.0:
                    if rng is None:
                        raise StateError("training-mode dropout needs an rng")
                    mask = dropout_mask(xs[0].shape, spec.drop_rate, rng)
                    y = xs[0] * mask
                else:
                    mask = None
                    y = xs[0]
                caches[name] = mask
            elif spec.kind == "concat":
                y = np.concatenate(xs, axis=-1)
            elif spec.kind == "gru":
                y, cache = self._gru_forward(name, spec, xs[0], states.get(name))
                caches[name] = cache
            values[name] = y
        self._tape = {"values": values, "caches": caches}
        if len(self.outputs) == 1:
            return values[self.outputs[0]]
        return {o: values[o] for o in self.outputs}

    def _gru_forward(self, name, spec, x, h0):
        if x.ndim < 3:
            raise DimensionError(f"gru {name!r} expects (batch, time, features), got {x.shape}")
        W, U, b = self.params[f"{name}.W"], self.params[f"{name}.U"], self.params[f"{name}.b"]
        H = spec.width
        B, T = x.shape[0], x.shape[1]
        h = np.zeros((B, H)) if h0 is None else np.array(h0, dtype=np.float64)
        xw = x @ W.T + b
        hs = np.empty((B, T + 1, H))
        hs[:, 0] = h
        zs = np.empty((B, T, H))
        rs = np.empty((B, T, H))
        hcs = np.empty((B, T, H))
        Uz, Ur, Uh = U[:H], U[H:2 * H], U[2 * H:]
        for t in range(T):
            z = sigmoid(xw[:, t, :H] + h @ Uz.T)
            r = sigmoid(xw[:, t, H:2 * H] + h @ Ur.T)
            hc = np.tanh(xw[:, t, 2 * H:] + (r * h) @ Uh.T)
            h = z * h + (1.0 - z) * hc
            zs[:, t], rs[:, t], hcs[:, t], hs[:, t + 1] = z, r, hc, h
        self.final_states[name] = h.copy()
        y = hs[:, 1:] if spec.return_sequences else h
        return y, (x, hs, zs, rs, hcs)

    def backward(self, output_grads) -> dict[str, np.ndarray]:
        """Gradients of the loss w.r.t. every parameter, given d loss / d output."""
        if self._tape is None:
            raise StateError("backward called without a recorded forward pass")
        if not isinstance(output_grads, dict):
            if len(self.outputs) != 1:
                raise ConfigError("graph has several outputs; pass a dict of gradients")
            output_grads = {self.outputs[0]: output_grads}
        values, caches = self._tape["values"], self._tape["caches"]
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        upstream: dict[str, np.ndarray] = {}
        for o, g in output_grads.items():
            g = np.asarray(g, dtype=np.float64)
            if g.shape != values[o].shape:
                raise DimensionError(f"gradient for {o!r} has shape {g.shape}, output is {values[o].shape}")
            upstream[o] = upstream.get(o, 0.0) + g

        for name in reversed(list(self.nodes)):
            spec = self.nodes[name]
            if spec.kind == "input" or name not in upstream:
                continue
            dy = upstream.pop(name)
            xs = [values[s] for s in spec.inputs]
            if spec.kind == "dense":
                W = self.params[f"{name}.W"]
                da = dy * activation_grad(caches[name], spec.activation)
                x2 = xs[0].reshape(-1, xs[0].shape[-1])
                da2 = da.reshape(-1, da.shape[-1])
                grads[f"{name}.W"] += da2.T @ x2
                grads[f"{name}.b"] += da2.sum(axis=0)
                dxs = [da @ W]
            elif spec.kind == "dropout":
                mask = caches[name]
                dxs = [dy if mask is None else dy * mask]
            elif spec.kind == "concat":
                dxs, start = [], 0
                for x in xs:
                    w = x.shape[-1]
                    dxs.append(dy[..., start:start + w])
                    start += w
            elif spec.kind == "gru":
                dxs = [self._gru_backward(name, spec, dy, caches[name], grads)]
            for src, dx in zip(spec.inputs, dxs):
                if src in upstream:
                    upstream[src] = upstream[src] + dx
                else:
                    upstream[src] = dx
        return grads

    def _gru_backward(self, name, spec, dy, cache, grads):
        x, hs, zs, rs, hcs = cache
        W, U = self.params[f"{name}.W"], self.params[f"{name}.U"]
        H = spec.width
        B, T = x.shape[0], x.shape[1]
        Uz, Ur, Uh = U[:H], U[H:2 * H], U[2 * H:]
        if spec.return_sequences:
            dseq = dy
        else:
            dseq = np.zeros((B, T, H))
            dseq[:, -1] = dy
        da = np.empty((B, T, 3 * H))
        dU = np.zeros_like(U)
        dh_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            h_prev = hs[:, t]
            z, r, hc = zs[:, t], rs[:, t], hcs[:, t]
            dh = dseq[:, t] + dh_next
            dz = dh * (h_prev - hc)
            dhc = dh * (1.0 - z)
            dh_prev = dh * z
            dah = dhc * (1.0 - hc * hc)
            drh = dah @ Uh
            dU[2 * H:] += dah.T @ (r * h_prev)
            dr = drh * h_prev
            dh_prev = dh_prev + drh * r
            daz = dz * z * (1.0 - z)
            dar = dr * r * (1.0 - r)
            dU[:H] += daz.T @ h_prev
            dU[H:2 * H] += dar.T @ h_prev
            dh_prev = dh_prev + daz @ Uz + dar @ Ur
            da[:, t, :H], da[:, t, H:2 * H], da[:, t, 2 * H:] = daz, dar, dah
            dh_next = dh_prev
        da2 = da.reshape(-1, 3 * H)
        grads[f"{name}.W"] += da2.T @ x.reshape(-1, x.shape[-1])
        grads[f"{name}.U"] += dU
        grads[f"{name}.b"] += da2.sum(axis=0)
        return da @ W


def backward(graph: ModelGraph, loss_grad) -> dict[str, np.ndarray]:
    return graph.backward(loss_grad)
