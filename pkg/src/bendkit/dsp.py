"""WAV I/O, block framing and spectral features."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError, UnsupportedFormatError

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 44100
LOG_FLOOR = 1e-10

_PCM, _FLOAT, _EXTENSIBLE = 0x0001, 0x0003, 0xFFFE
_INT_SCALE = {1: 127.0, 2: 32767.0, 3: 8388607.0, 4: 2147483647.0}


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ConfigError(f"sample rate must be > 0, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("audio contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


# WAV


def read_wav(data: bytes) -> AudioBuffer:
    """Decode RIFF/WAVE PCM (8/16/24/32-bit) or float; channels are averaged."""
    data = bytes(data)
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise ParseError("not a RIFF/WAVE file", offset=0)
    pos, fmt, payload = 12, None, None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise ParseError("fmt chunk too short", offset=pos)
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body)
            if tag == _EXTENSIBLE and size >= 40:
                (tag,) = struct.unpack_from("<H", body, 24)
            fmt = (tag, channels, rate, bits)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise ParseError("missing fmt or data chunk", offset=pos)
    tag, channels, rate, bits = fmt
    if channels < 1:
        raise ParseError("zero channels", offset=12)
    width = bits // 8
    if tag == _PCM and width in _INT_SCALE:
        if width == 1:
            x = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) - 128.0
        elif width == 3:
            raw = np.frombuffer(payload[: len(payload) // 3 * 3], dtype=np.uint8).reshape(-1, 3)
            ints = raw[:, 0].astype(np.int32) | (raw[:, 1].astype(np.int32) << 8) | (raw[:, 2].astype(np.int32) << 16)
            x = np.where(ints >= 1 << 23, ints - (1 << 24), ints).astype(np.float64)
        else:
            dt = {2: "<i2", 4: "<i4"}[width]
            x = np.frombuffer(payload[: len(payload) // width * width], dtype=dt).astype(np.float64)
        x /= _INT_SCALE[width]
    elif tag == _FLOAT and bits in (32, 64):
        dt = "<f4" if bits == 32 else "<f8"
        x = np.frombuffer(payload[: len(payload) // width * width], dtype=dt).astype(np.float64)
    else:
        raise UnsupportedFormatError(f"unsupported WAV encoding: format tag {tag:#06x}, {bits} bits")
    x = x[: x.size // channels * channels].reshape(-1, channels).mean(axis=1)
    return AudioBuffer(np.clip(x, -1.0, 1.0), rate)


def write_wav(buffer: AudioBuffer, bit_depth: int = 16) -> bytes:
    """Encode mono WAV. 16/24-bit integer PCM scale by 2**(bits-1) - 1; 32 means float."""
    x = np.clip(buffer.samples, -1.0, 1.0)
    if bit_depth == 16:
        raw = np.round(x * 32767.0).astype("<i2").tobytes()
        tag = _PCM
    elif bit_depth == 24:
        ints = np.round(x * 8388607.0).astype(np.int32)
        raw = ints.astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
        tag = _PCM
    elif bit_depth == 32:
        raw = x.astype("<f4").tobytes()
        tag = _FLOAT
    else:
        raise ConfigError(f"bit depth must be 16, 24 or 32, got {bit_depth}")
    block = bit_depth // 8
    fmt = struct.pack("<HHIIHH", tag, 1, buffer.sample_rate, buffer.sample_rate * block, block, bit_depth)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(raw)) + raw
    if len(raw) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def load_wav(path) -> AudioBuffer:
    path = Path(path)
    if not path.exists():
        raise DataError(f"audio file not found: {path}")
    return read_wav(path.read_bytes())


def save_wav(path, buffer: AudioBuffer, bit_depth: int = 16) -> None:
    Path(path).write_bytes(write_wav(buffer, bit_depth))


# framing


def block_arrays(samples, block_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Inputs and targets of consecutive non-overlapping block pairs."""
    if block_size < 1:
        raise ConfigError(f"block size must be >= 1, got {block_size}")
    x = np.asarray(samples, dtype=np.float64)
    n_blocks = x.size // block_size
    if n_blocks < 2:
        raise DataError(f"need at least {2 * block_size} samples for block size {block_size}, got {x.size}")
    blocks = x[: n_blocks * block_size].reshape(n_blocks, block_size)
    return blocks[:-1], blocks[1:]


def frame_blocks(buffer: AudioBuffer, block_size: int) -> list[tuple[np.ndarray, np.ndarray]]:
    inputs, targets = block_arrays(buffer.samples, block_size)
    return list(zip(inputs, targets))


# spectra


@dataclass
class SpectralFrame:
    coefficients: np.ndarray
    kind: str  # "stft", "mel" or "mfcc"
    frame_size: int
    hop_size: int
    sample_rate: int = DEFAULT_SAMPLE_RATE


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def get_window(name: str, size: int) -> np.ndarray:
    if name in ("hann", "hanning"):
        # periodic Hann
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(size) / size)
    if name in ("rect", "rectangular", "boxcar", None):
        return np.ones(size)
    raise ConfigError(f"unknown window {name!r}")


def frame_signal(samples, frame_size: int, hop_size: int) -> np.ndarray:
    """``(n_frames, frame_size)`` view of the signal; short signals are zero-padded."""
    if not _is_pow2(frame_size):
        raise ConfigError(f"frame size must be a power of two, got {frame_size}")
    if hop_size < 1:
        raise ConfigError(f"hop size must be >= 1, got {hop_size}")
    x = np.asarray(samples, dtype=np.float64)
    if x.size < frame_size:
        log.warning("signal of %d samples shorter than frame %d; zero-padding one frame", x.size, frame_size)
        return np.pad(x, (0, frame_size - x.size))[None, :]
    n = 1 + (x.size - frame_size) // hop_size
    return np.lib.stride_tricks.sliding_window_view(x, frame_size)[::hop_size][:n]


def stft_matrix(buffer: AudioBuffer, frame_size: int = 1024, hop_size: int = 256,
                window: str = "hann") -> np.ndarray:
    frames = frame_signal(buffer.samples, frame_size, hop_size) * get_window(window, frame_size)
    return np.abs(np.fft.rfft(frames, axis=-1))


def stft_magnitude(buffer: AudioBuffer, frame_size: int = 1024, hop_size: int = 256,
                   window: str = "hann") -> list[SpectralFrame]:
    mags = stft_matrix(buffer, frame_size, hop_size, window)
    return [SpectralFrame(m, "stft", frame_size, hop_size, buffer.sample_rate) for m in mags]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, frame_size: int, sample_rate: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """``(n_mels, frame_size // 2 + 1)`` triangular filters on the HTK mel scale.

    Each row sums to one, so a flat power spectrum maps to a constant mel
    vector.
    """
    fmax = sample_rate / 2.0 if fmax is None else fmax
    n_bins = frame_size // 2 + 1
    freqs = np.arange(n_bins) * sample_rate / frame_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
        if fb[i].sum() == 0.0:
            # band narrower than one bin: take the nearest bin
            fb[i, int(np.argmin(np.abs(freqs - mid)))] = 1.0
    return fb / fb.sum(axis=1, keepdims=True)


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II rows 0..n_out-1."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    m = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    m[0] /= np.sqrt(2.0)
    return m


def mfcc_from_magnitudes(mags: np.ndarray, sample_rate: int, n_mels: int = 40, n_coeffs: int = 13,
                         frame_size: int | None = None) -> np.ndarray:
    mags = np.atleast_2d(mags)
    if n_coeffs > n_mels:
        raise ConfigError(f"n_coeffs ({n_coeffs}) must not exceed n_mels ({n_mels})")
    frame_size = frame_size or 2 * (mags.shape[-1] - 1)
    fb = mel_filterbank(n_mels, frame_size, sample_rate)
    logmel = np.log(np.maximum((mags * mags) @ fb.T, LOG_FLOOR))
    return logmel @ dct_matrix(n_coeffs, n_mels).T


def mfcc(frames: list[SpectralFrame], n_mels: int = 40, n_coeffs: int = 13) -> list[SpectralFrame]:
    """Log mel power followed by an orthonormal DCT-II, keeping ``n_coeffs``."""
    if not frames:
        return []
    if any(f.kind != "stft" for f in frames):
        raise ConfigError("mfcc needs STFT magnitude frames")
    f0 = frames[0]
    mags = np.stack([f.coefficients for f in frames])
    coeffs = mfcc_from_magnitudes(mags, f0.sample_rate, n_mels, n_coeffs, f0.frame_size)
    return [SpectralFrame(c, "mfcc", f0.frame_size, f0.hop_size, f0.sample_rate) for c in coeffs]
