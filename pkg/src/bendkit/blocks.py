"""Next-block audio model: predict the following B samples from the current B.

Training pairs come from every buffer in a mixture of labelled corpora. A
rollout feeds each predicted block back in, and each block is written as its
own WAV file so a sampler can map them across the keyboard.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import AudioBuffer, block_arrays, write_wav
from .errors import ConfigError, DataError
from .nn import ModelGraph, TrainConfig, TrainReport, train
from .nn.functional import check_activation
from .sampler import Envelope, SamplerInstrumentSpec, map_samples, write_instrument

log = logging.getLogger(__name__)

INPUT = "block"
OUTPUT = "next_block"


@dataclass
class BlockModelSpec:
    layers: int = 2
    width: int = 32
    block_size: int = 10
    activation: str = "tanh"
    drop_rate: float = 0.5
    output_activation: str = "tanh"

    def __post_init__(self):
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if self.layers < 0 or self.width < 1:
            raise ConfigError("layers must be >= 0 and width >= 1")
        if not 0 <= self.drop_rate < 1:
            raise ConfigError(f"drop_rate must be in [0, 1), got {self.drop_rate}")
        check_activation(self.activation)
        if self.output_activation not in ("linear", "tanh"):
            raise ConfigError("output_activation must be 'linear' or 'tanh'")


@dataclass
class DatasetMixture:
    """Labelled audio collections that are trained on as one pool."""

    sources: list[tuple[str, list[AudioBuffer]]]

    def __post_init__(self):
        buffers = [b for _, bufs in self.sources for b in bufs]
        if not buffers:
            raise DataError("dataset mixture is empty")
        rates = {b.sample_rate for b in buffers}
        if len(rates) != 1:
            raise DataError(f"mixture mixes sample rates {sorted(rates)}")

    @property
    def sample_rate(self) -> int:
        return next(self.buffers())[1].sample_rate

    def buffers(self):
        for label, bufs in self.sources:
            for b in bufs:
                yield label, b


def build_block_model(spec: BlockModelSpec, seed: int = 0) -> ModelGraph:
    g = ModelGraph(seed=seed)
    h = g.add_input(INPUT, spec.block_size)
    for i in range(spec.layers):
        h = g.add_dense(h, spec.width, spec.activation, name=f"dense_{i}")
        h = g.add_dropout(h, spec.drop_rate, name=f"dropout_{i}")
    g.add_dense(h, spec.block_size, spec.output_activation, name=OUTPUT)
    g.set_outputs([OUTPUT])
    return g


def mixture_pairs(mixture: DatasetMixture, block_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Union of the block pairs of every buffer in the mixture."""
    xs, ys = [], []
    for label, buf in mixture.buffers():
        try:
            x, y = block_arrays(buf.samples, block_size)
        except DataError as exc:
            raise DataError(f"source {label!r}: {exc}") from exc
        xs.append(x)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def train_blocks(graph: ModelGraph, mixture: DatasetMixture, spec: BlockModelSpec,
                 config: TrainConfig) -> TrainReport:
    x, y = mixture_pairs(mixture, spec.block_size)
    log.info("training on %d block pairs of %d samples", len(x), spec.block_size)
    return train(graph, x, y, config)


def default_seed_block(mixture: DatasetMixture, block_size: int, seed: int = 0,
                       noise: bool = False) -> np.ndarray:
    """First block of a randomly picked training buffer, or uniform noise."""
    rng = np.random.default_rng(seed)
    if noise:
        return rng.uniform(-1, 1, block_size)
    buffers = [b for _, b in mixture.buffers()]
    buf = buffers[int(rng.integers(len(buffers)))]
    if len(buf) < block_size:
        raise DataError(f"seed buffer shorter than one block ({len(buf)} < {block_size})")
    return buf.samples[:block_size].copy()


def generate_blocks(graph: ModelGraph, seed_block, num_blocks: int,
                    sample_rate: int = 44100) -> tuple[list[AudioBuffer], int]:
    """Roll the model out for ``num_blocks`` blocks.

    Block i+1 is the model applied to block i (the clipped block that was
    emitted). Returns the blocks and how many samples were clipped to [-1, 1].
    """
    if num_blocks < 1:
        raise ConfigError(f"num_blocks must be >= 1, got {num_blocks}")
    x = np.asarray(seed_block, dtype=np.float64).reshape(1, -1)
    width = graph.width_of(graph.input_names[0])
    if x.shape[1] != width:
        raise DataError(f"seed block has {x.shape[1]} samples, model expects {width}")
    blocks, clipped = [], 0
    for _ in range(num_blocks):
        y = graph.forward({INPUT: x}, training=False)
        clipped += int(np.count_nonzero(np.abs(y) > 1.0))
        x = np.clip(y, -1.0, 1.0)
        blocks.append(AudioBuffer(x[0].copy(), sample_rate))
    if clipped:
        log.info("clipped %d generated samples", clipped)
    return blocks, clipped


def export_sound_set(blocks: list[AudioBuffer], out_dir, adsr: Envelope | None = None,
                     name: str = "generated", strategy: str = "round_robin_chromatic",
                     clip_count: int = 0, provenance: dict | None = None,
                     bit_depth: int = 16) -> SamplerInstrumentSpec:
    """Write ``gen_000.wav``... plus a preset and a JSON manifest into ``out_dir``.

    The manifest records the file names, the rollout's clip count and any
    provenance (seed, seed block source) the caller passes.
    """
    if not blocks:
        raise DataError("no blocks to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, buf in enumerate(blocks):
        fname = f"gen_{i:03d}.wav"
        try:
            (out_dir / fname).write_bytes(write_wav(buf, bit_depth))
        except OSError as exc:
            raise DataError(f"cannot write {out_dir / fname}: {exc}") from exc
        names.append(fname)
    spec = SamplerInstrumentSpec(name, map_samples(names, strategy), adsr or Envelope())
    preset = write_instrument(out_dir, spec, f"{name}.dspreset")
    manifest = {
        "files": names,
        "preset": preset.name,
        "clip_count": int(clip_count),
        "provenance": provenance or {},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return spec
