"""Single-cycle wavetables generated from the spectral features of a sound.

The network maps a flattened (coefficients x frames) STFT or MFCC matrix
taken from the loudest part of a file to ``block_size`` samples through a
dense stack with a tanh output.

Two ways of training are offered:

* ``deployed``: regress the samples of a representative cycle of the
  source. The cycle is the first ``block_size`` samples of the peak-energy
  region, started at a rising zero crossing and peak-normalized to
  :data:`TARGET_PEAK`.
* ``spectral``: no sample target. The generated table is tiled to one
  analysis frame and its feature vector is pulled towards the source's
  average feature frame (mean squared difference). This is unstable by
  nature, so it trains with gradient clipping and a divergence guard.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import LOG_FLOOR, AudioBuffer, dct_matrix, get_window, mel_filterbank, mfcc, stft_magnitude, write_wav
from .errors import ConfigError, DataError
from .nn import ModelGraph, TrainConfig, TrainReport, train
from .sampler import Envelope, SampleZone, SamplerInstrumentSpec, write_instrument

log = logging.getLogger(__name__)

INPUT = "features"
OUTPUT = "wavetable"
TARGET_PEAK = 0.95
# keeps log-mel cepstra roughly within [-2, 2]
MFCC_SCALE = 0.01
FEATURE_KINDS = ("stft", "mfcc")
LOSS_MODES = ("deployed", "spectral")


@dataclass
class WavetableModelSpec:
    layers: int = 2
    width: int = 64
    block_size: int = 1024
    feature: str = "mfcc"
    loss_mode: str = "deployed"
    frame_size: int = 1024
    hop_size: int = 256
    n_frames: int = 10
    n_mels: int = 40
    n_coeffs: int = 13

    def __post_init__(self):
        if self.feature not in FEATURE_KINDS:
            raise ConfigError(f"feature must be one of {FEATURE_KINDS}, got {self.feature!r}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.block_size < 2:
            raise ConfigError(f"block_size must be >= 2, got {self.block_size}")
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")
        if min(self.width, self.n_frames, self.hop_size) < 1:
            raise ConfigError("width, n_frames and hop_size must be >= 1")
        if self.frame_size < 2 or self.frame_size & (self.frame_size - 1):
            raise ConfigError(f"frame_size must be a power of two, got {self.frame_size}")
        if self.feature == "mfcc" and self.n_coeffs > self.n_mels:
            raise ConfigError("n_coeffs must not exceed n_mels")

    @property
    def n_bins(self) -> int:
        return self.frame_size // 2 + 1

    @property
    def coeffs_per_frame(self) -> int:
        return self.n_coeffs if self.feature == "mfcc" else self.n_bins

    @property
    def input_size(self) -> int:
        return self.coeffs_per_frame * self.n_frames

    @property
    def region_length(self) -> int:
        return self.frame_size + (self.n_frames - 1) * self.hop_size


@dataclass
class Wavetable:
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or len(self.samples) < 2:
            raise DataError("a wavetable needs at least 2 samples")
        if np.any(np.abs(self.samples) > 1.0):
            raise DataError("wavetable samples must lie in [-1, 1]")

    def __len__(self):
        return len(self.samples)

    @property
    def discontinuity(self) -> float:
        """Jump between the last and first sample when the cycle loops."""
        return float(abs(self.samples[0] - self.samples[-1]))


def build_wavetable_model(spec: WavetableModelSpec, seed: int = 0) -> ModelGraph:
    g = ModelGraph(seed=seed)
    h = g.add_input(INPUT, spec.input_size)
    for i in range(spec.layers):
        h = g.add_dense(h, spec.width, "tanh", name=f"dense_{i}")
    g.add_dense(h, spec.block_size, "tanh", name=OUTPUT)
    g.set_outputs([OUTPUT])
    return g


# features


def peak_region_start(samples: np.ndarray, length: int, hop: int) -> int:
    """Start (multiple of ``hop``) of the ``length``-sample window with the most energy."""
    if len(samples) <= length:
        return 0
    energy = np.concatenate([[0.0], np.cumsum(samples * samples)])
    starts = np.arange(0, len(samples) - length + 1, hop)
    return int(starts[np.argmax(energy[starts + length] - energy[starts])])


def _region(buffer: AudioBuffer, spec: WavetableModelSpec) -> np.ndarray:
    x = buffer.samples
    if len(x) < spec.frame_size:
        raise DataError(f"source has {len(x)} samples, fewer than one {spec.frame_size}-sample frame")
    start = peak_region_start(x, spec.region_length, spec.hop_size)
    region = x[start:start + spec.region_length]
    return np.pad(region, (0, spec.region_length - len(region)))


def feature_matrix(buffer: AudioBuffer, spec: WavetableModelSpec) -> np.ndarray:
    """Scaled (coefficients x frames) matrix of the source's loudest region."""
    region = AudioBuffer(_region(buffer, spec), buffer.sample_rate)
    frames = stft_magnitude(region, spec.frame_size, spec.hop_size, "hann")
    if spec.feature == "mfcc":
        frames = mfcc(frames, spec.n_mels, spec.n_coeffs)
        scale = MFCC_SCALE
    else:
        scale = 2.0 / get_window("hann", spec.frame_size).sum()
    return np.stack([f.coefficients for f in frames], axis=1) * scale


def flatten_features(matrix: np.ndarray) -> np.ndarray:
    # frame-major, so each frame's coefficients stay contiguous
    return matrix.T.reshape(-1)


def cycle_target(buffer: AudioBuffer, spec: WavetableModelSpec) -> np.ndarray | None:
    """Sample-domain target: one aligned, peak-normalized block, or None if too short."""
    x = buffer.samples
    if len(x) < spec.block_size:
        return None
    start = peak_region_start(x, max(spec.region_length, spec.block_size), spec.hop_size)
    seg = x[start:]
    # first rising zero crossing that still leaves a full block
    rising = np.flatnonzero((seg[:-1] <= 0) & (seg[1:] > 0)) + 1
    rising = rising[rising + spec.block_size <= len(seg)]
    offset = int(rising[0]) if len(rising) else 0
    block = seg[offset:offset + spec.block_size]
    if len(block) < spec.block_size:
        block = x[-spec.block_size:]
    peak = np.max(np.abs(block))
    return block * (TARGET_PEAK / peak) if peak > 0 else block.copy()


# spectral loss chain


class SpectralFeatures:
    """Differentiable feature vector of one analysis frame.

    The magnitude spectrum is built from explicit DFT matrices so the chain
    rule can be written out; ``sqrt(re^2 + im^2 + eps)`` keeps the gradient
    finite at zero magnitude.
    """

    EPS = 1e-12

    def __init__(self, spec: WavetableModelSpec, sample_rate: int):
        n = spec.frame_size
        k = np.arange(spec.n_bins)[:, None]
        t = np.arange(n)[None, :]
        self.window = get_window("hann", n)
        self.cos = np.cos(2 * np.pi * k * t / n)
        self.sin = -np.sin(2 * np.pi * k * t / n)
        self.kind = spec.feature
        self.frame_size = n
        self.block_size = spec.block_size
        self.tile = np.arange(n) % spec.block_size
        if self.kind == "mfcc":
            self.fb = mel_filterbank(spec.n_mels, n, sample_rate)
            self.dct = dct_matrix(spec.n_coeffs, spec.n_mels)
            self.scale = MFCC_SCALE
        else:
            self.scale = 2.0 / self.window.sum()

    def of_frames(self, frames: np.ndarray):
        """Features of (batch, frame_size) frames plus the cache for :meth:`grad`."""
        xw = frames * self.window
        re, im = xw @ self.cos.T, xw @ self.sin.T
        if self.kind == "stft":
            mag = np.sqrt(re * re + im * im + self.EPS)
            return self.scale * mag, (re, im, mag)
        mel = (re * re + im * im) @ self.fb.T + LOG_FLOOR
        return self.scale * np.log(mel) @ self.dct.T, (re, im, mel)

    def grad_frames(self, dfeat: np.ndarray, cache) -> np.ndarray:
        re, im, aux = cache
        if self.kind == "stft":
            dmag = self.scale * dfeat / aux
            dre, dim = dmag * re, dmag * im
        else:
            dpow = ((self.scale * dfeat @ self.dct) / aux) @ self.fb
            dre, dim = 2 * dpow * re, 2 * dpow * im
        return (dre @ self.cos + dim @ self.sin) * self.window

    def of_tables(self, tables: np.ndarray):
        return self.of_frames(tables[:, self.tile])

    def grad_tables(self, dfeat: np.ndarray, cache) -> np.ndarray:
        dframe = self.grad_frames(dfeat, cache)
        out = np.zeros((len(dframe), self.block_size))
        for i in range(len(dframe)):
            out[i] = np.bincount(self.tile, weights=dframe[i], minlength=self.block_size)
        return out

    def source_target(self, buffer: AudioBuffer, spec: WavetableModelSpec) -> np.ndarray:
        """Average feature frame over the source's loudest region."""
        region = _region(buffer, spec)
        starts = range(0, len(region) - spec.frame_size + 1, spec.hop_size)
        frames = np.stack([region[s:s + spec.frame_size] for s in starts])
        return self.of_frames(frames)[0].mean(axis=0)

    def loss_fn(self):
        def loss(pred, target):
            feats, cache = self.of_tables(pred)
            diff = feats - target
            value = float(np.mean(diff * diff))
            return value, self.grad_tables(2.0 * diff / diff.size, cache)
        return loss


# training


def _usable(corpus, spec: WavetableModelSpec):
    if not corpus:
        raise DataError("wavetable corpus is empty")
    kept = []
    for i, buf in enumerate(corpus):
        if len(buf) < max(spec.block_size, spec.frame_size):
            log.warning("skipping source %d: %d samples is shorter than one block/frame", i, len(buf))
            continue
        kept.append(buf)
    if not kept:
        raise DataError("every source in the corpus is shorter than one block")
    return kept


def train_deployed(graph: ModelGraph, corpus: list[AudioBuffer], spec: WavetableModelSpec,
                   config: TrainConfig) -> TrainReport:
    kept = _usable(corpus, spec)
    x = np.stack([flatten_features(feature_matrix(b, spec)) for b in kept])
    y = np.stack([cycle_target(b, spec) for b in kept])
    return train(graph, x, y, config)


def spectral_config(config: TrainConfig) -> TrainConfig:
    """``config`` with the guards spectral training always runs under."""
    return TrainConfig(
        learning_rate=config.learning_rate, epochs=config.epochs, batch_size=config.batch_size,
        seed=config.seed, optimizer=config.optimizer, shuffle=config.shuffle,
        clip_norm=1.0 if config.clip_norm is None else config.clip_norm,
        divergence_threshold=1e6 if config.divergence_threshold is None else config.divergence_threshold,
    )


def train_spectral(graph: ModelGraph, corpus: list[AudioBuffer], spec: WavetableModelSpec,
                   config: TrainConfig) -> TrainReport:
    kept = _usable(corpus, spec)
    chain = SpectralFeatures(spec, kept[0].sample_rate)
    x = np.stack([flatten_features(feature_matrix(b, spec)) for b in kept])
    t = np.stack([chain.source_target(b, spec) for b in kept])
    report = train(graph, x, t, spectral_config(config), loss_fns={OUTPUT: chain.loss_fn()})
    if report.aborted:
        log.warning("spectral training stopped: %s", report.abort_reason)
    return report


def train_wavetable(graph, corpus, spec: WavetableModelSpec, config: TrainConfig) -> TrainReport:
    if spec.loss_mode == "spectral":
        return train_spectral(graph, corpus, spec, config)
    return train_deployed(graph, corpus, spec, config)


# generation and export


def generate_wavetable(graph: ModelGraph, source: AudioBuffer, spec: WavetableModelSpec) -> Wavetable:
    x = flatten_features(feature_matrix(source, spec))[None]
    table = Wavetable(np.clip(graph.forward({INPUT: x})[0], -1.0, 1.0))
    log.info("wavetable endpoint discontinuity %.4g", table.discontinuity)
    return table


def cycle_root_note(length: int, sample_rate: int) -> int:
    """MIDI note closest to the pitch of one cycle of ``length`` samples."""
    return int(round(69 + 12 * np.log2(sample_rate / length / 440.0)))


def export_wavetable_instrument(table: Wavetable, out_dir, adsr: Envelope | None = None,
                                sample_rate: int = 44100, name: str = "wavetable",
                                bit_depth: int = 16) -> SamplerInstrumentSpec:
    """Write the cycle as a looping WAV plus a single-zone preset."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wav = f"{name}.wav"
    root = min(max(cycle_root_note(len(table), sample_rate), 0), 127)
    spec = SamplerInstrumentSpec(
        name, [SampleZone(wav, root, 0, 127, loop=(0, len(table) - 1))], adsr or Envelope())
    spec.validate()
    try:
        (out_dir / wav).write_bytes(write_wav(AudioBuffer(table.samples, sample_rate), bit_depth))
    except OSError as exc:
        raise DataError(f"cannot write {out_dir / wav}: {exc}") from exc
    write_instrument(out_dir, spec, f"{name}.dspreset")
    return spec
