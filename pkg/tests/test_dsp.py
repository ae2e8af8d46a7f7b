import io
import struct
import wave

import numpy as np
import pytest
import scipy.fft
from hypothesis import given
from hypothesis import strategies as st

from bendkit.dsp import (
    LOG_FLOOR,
    AudioBuffer,
    dct_matrix,
    frame_blocks,
    mel_filterbank,
    mfcc,
    read_wav,
    stft_magnitude,
    write_wav,
)
from bendkit.errors import ConfigError, DataError, UnsupportedFormatError


def stdlib_wav(samples_int16, channels=1, rate=44100):
    out = io.BytesIO()
    with wave.open(out, "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(np.asarray(samples_int16, dtype="<i2").tobytes())
    return out.getvalue()


def test_read_zeros():
    buf = read_wav(stdlib_wav(np.zeros(100)))
    assert buf.sample_rate == 44100
    assert len(buf) == 100 and not buf.samples.any()


def test_full_scale_is_32767():
    data = write_wav(AudioBuffer([1.0, -1.0, 0.5]), 16)
    with wave.open(io.BytesIO(data)) as w:
        ints = np.frombuffer(w.readframes(3), dtype="<i2")
    assert ints.tolist() == [32767, -32767, 16384]


def test_stereo_downmix():
    buf = read_wav(stdlib_wav([32767, -32767, 16384, 0], channels=2))
    np.testing.assert_allclose(buf.samples, [0.0, 16384 / 32767 / 2])


@pytest.mark.parametrize("bits, lsb", [(16, 2.0 ** -15), (24, 2.0 ** -23), (32, 2.0 ** -23)])
def test_round_trip_within_lsb(bits, lsb):
    x = np.random.default_rng(0).uniform(-1, 1, 5000)
    back = read_wav(write_wav(AudioBuffer(x, 22050), bits))
    assert back.sample_rate == 22050
    assert np.max(np.abs(back.samples - x)) <= lsb


def test_unsupported_encoding():
    fmt = struct.pack("<HHIIHH", 2, 1, 8000, 4000, 1, 4)  # MS ADPCM
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 2) + b"\0\0"
    with pytest.raises(UnsupportedFormatError):
        read_wav(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_bad_bit_depth():
    with pytest.raises(ConfigError):
        write_wav(AudioBuffer([0.0]), 12)


# block framing


def test_block_pair_count():
    assert len(frame_blocks(AudioBuffer(np.zeros(100)), 4)) == 24


def test_block_pair_example():
    pairs = frame_blocks(AudioBuffer(np.arange(1.0, 9.0) / 10), 4)
    assert len(pairs) == 1
    np.testing.assert_allclose(pairs[0][0], [0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(pairs[0][1], [0.5, 0.6, 0.7, 0.8])


def test_block_size_one():
    pairs = frame_blocks(AudioBuffer(np.linspace(0, 1, 7)), 1)
    assert len(pairs) == 6
    assert all(p[1][0] > p[0][0] for p in pairs)


def test_block_too_short():
    with pytest.raises(DataError):
        frame_blocks(AudioBuffer(np.zeros(7)), 4)


@given(st.integers(2, 300), st.integers(1, 20))
def test_blocks_tile_signal(n, b):
    x = np.random.default_rng(n).uniform(-1, 1, n)
    if n < 2 * b:
        with pytest.raises(DataError):
            frame_blocks(AudioBuffer(x), b)
        return
    pairs = frame_blocks(AudioBuffer(x), b)
    tiled = np.concatenate([p[0] for p in pairs] + [pairs[-1][1]])
    np.testing.assert_array_equal(tiled, x[: (len(pairs) + 1) * b])


# STFT


def test_bin_centred_sine():
    N, k = 256, 10
    t = np.arange(N)
    frames = stft_magnitude(AudioBuffer(np.sin(2 * np.pi * k * t / N)), N, N, "rect")
    mag = frames[0].coefficients
    assert mag.shape == (N // 2 + 1,)
    assert int(np.argmax(mag)) == k
    assert mag[k] == pytest.approx(N / 2)
    others = np.delete(mag, k)
    assert np.all(others < 1e-10 * mag[k])


def test_zero_input():
    frames = stft_magnitude(AudioBuffer(np.zeros(3000)), 1024, 256)
    assert len(frames) == 1 + (3000 - 1024) // 256
    assert all(not f.coefficients.any() for f in frames)


def test_parseval_rect():
    N = 512
    x = np.random.default_rng(1).uniform(-1, 1, 4 * N)
    for i, f in enumerate(stft_magnitude(AudioBuffer(x), N, N, "rect")):
        power = f.coefficients ** 2
        full = power[0] + power[-1] + 2 * power[1:-1].sum()
        seg = x[i * N:(i + 1) * N]
        assert full / N == pytest.approx(np.sum(seg ** 2), rel=1e-9)


def test_short_signal_single_padded_frame():
    frames = stft_magnitude(AudioBuffer(np.ones(100)), 256, 64)
    assert len(frames) == 1


def test_stft_scales_linearly():
    x = np.random.default_rng(2).uniform(-0.3, 0.3, 4096)
    a = np.stack([f.coefficients for f in stft_magnitude(AudioBuffer(x))])
    b = np.stack([f.coefficients for f in stft_magnitude(AudioBuffer(3 * x))])
    np.testing.assert_allclose(b, 3 * a, rtol=1e-12, atol=1e-12)


def test_frame_size_power_of_two():
    with pytest.raises(ConfigError):
        stft_magnitude(AudioBuffer(np.zeros(2000)), 1000, 100)


# mel / MFCC


def test_dct_matches_scipy():
    v = np.random.default_rng(3).normal(size=40)
    np.testing.assert_allclose(dct_matrix(40, 40) @ v, scipy.fft.dct(v, norm="ortho"), atol=1e-12)


def test_filterbank_rows_are_averages():
    fb = mel_filterbank(40, 1024, 44100)
    np.testing.assert_allclose(fb.sum(axis=1), 1.0)
    assert np.all(fb >= 0)
    centres = np.argmax(fb, axis=1)
    assert np.all(np.diff(centres) >= 0)


def _stft_frames(mags, frame_size=1024):
    from bendkit.dsp import SpectralFrame
    return [SpectralFrame(m, "stft", frame_size, 256, 44100) for m in mags]


def test_mfcc_flat_spectrum():
    c = mfcc(_stft_frames([np.full(513, 2.0)]), 40, 13)[0].coefficients
    assert c[0] == pytest.approx(np.sqrt(40) * np.log(4.0))
    assert np.all(np.abs(c[1:]) < 1e-12)


def test_mfcc_silence_floor():
    c = mfcc(_stft_frames([np.zeros(513)]), 40, 13)[0].coefficients
    assert c[0] == pytest.approx(np.sqrt(40) * np.log(LOG_FLOOR))
    assert np.all(np.abs(c[1:]) < 1e-9)


def test_mfcc_identical_frames():
    m = np.abs(np.random.default_rng(4).normal(size=513))
    a, b = mfcc(_stft_frames([m, m.copy()]))
    np.testing.assert_array_equal(a.coefficients, b.coefficients)
    assert a.kind == "mfcc" and a.coefficients.shape == (13,)


def test_mfcc_config_error():
    with pytest.raises(ConfigError):
        mfcc(_stft_frames([np.ones(513)]), n_mels=10, n_coeffs=11)
