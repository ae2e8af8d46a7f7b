# Training convergence, the 60 s memory trace and the realtime benchmark
# live in test_acceptance.py; these tests cover structure and equivalences.
import numpy as np
import pytest

from bendkit.dsp import AudioBuffer
from bendkit.errors import ConfigError, DataError
from bendkit.grufx import (
    FxEngine,
    GruFxSpec,
    benchmark_stream,
    build_gru_fx,
    bypass_graph,
    chunk_sequences,
    fx_pairs,
    process_sample,
    render_file,
    self_prediction_target,
    sliding_windows,
    train_fx,
)
from bendkit.nn import TrainConfig, load_model, save_model
from bendkit.nn.functional import gru_step


def noise(n, seed=0, amp=0.9):
    return AudioBuffer(np.random.default_rng(seed).uniform(-amp, amp, n), 44100)


def test_listing_spec_runs():
    g = build_gru_fx(GruFxSpec(4, 8, "tanh", scaler=2), seed=0)
    out = g.forward({"window": np.zeros((1, 5, 8))})
    assert out.shape == (1, 5, 1)
    assert [s.width for s in g.nodes.values() if s.kind == "gru"] == [32] * 4


def test_scaler_grows_parameters():
    p1 = build_gru_fx(GruFxSpec(scaler=1)).num_params()
    p2 = build_gru_fx(GruFxSpec(scaler=2)).num_params()
    assert p2 > p1


def test_minimal_spec():
    out, _ = render_file(build_gru_fx(GruFxSpec(1, 1), seed=0), noise(50))
    assert len(out) == 50


def test_bad_spec():
    for kw in ({"layers": 0}, {"memory": 0}, {"scaler": 0}, {"activation": "swish"}):
        with pytest.raises(ConfigError):
            GruFxSpec(**kw)


def test_window_count_and_layout():
    buf = AudioBuffer(np.arange(1.0, 21.0) / 100)
    x, y = fx_pairs(buf, buf, 4)
    assert len(x) == 20 - 4
    np.testing.assert_allclose(x[0], [0.02, 0.03, 0.04, 0.05])
    assert y[0] == pytest.approx(0.05)


def test_sliding_windows_zero_pad():
    w = sliding_windows([1.0, 2.0, 3.0], 3)
    np.testing.assert_array_equal(w, [[0, 0, 1], [0, 1, 2], [1, 2, 3]])


def test_pair_errors():
    with pytest.raises(DataError):
        fx_pairs(noise(10), noise(11), 4)
    with pytest.raises(DataError):
        fx_pairs(noise(4), noise(4), 4)


def test_chunks_cover_every_window():
    w = np.arange(10.0)[:, None]
    x, y = chunk_sequences(w, np.arange(10.0), 4)
    assert x.shape == (3, 4, 1) and y.shape == (3, 4, 1)
    assert set(x.ravel()) == set(range(10))
    np.testing.assert_array_equal(x[-1, :, 0], [6, 7, 8, 9])


def test_self_prediction_target():
    np.testing.assert_array_equal(self_prediction_target(AudioBuffer([1.0, 2.0, 3.0])).samples, [2, 3, 3])


def test_training_deterministic():
    spec = GruFxSpec(1, 4, base_width=4)
    buf = noise(300)
    runs = []
    for _ in range(2):
        g = build_gru_fx(spec, seed=2)
        runs.append(train_fx(g, buf, buf, spec, TrainConfig(epochs=2, batch_size=2), chunk=32).losses)
    assert runs[0] == runs[1]


def test_kernel_matches_graph_forward():
    spec = GruFxSpec(3, 5, "tanh", base_width=6)
    g = build_gru_fx(spec, seed=7)
    buf = noise(400, 1)
    out, _ = render_file(g, buf)
    ref = g.forward({"window": sliding_windows(buf.samples, 5)[None]})[0, :, 0]
    np.testing.assert_allclose(out.samples, ref, rtol=0, atol=1e-12)


def test_single_layer_matches_scalar_oracle():
    g = build_gru_fx(GruFxSpec(1, 2, "linear", base_width=3), seed=3)
    W, U, b = (g.params[f"gru_0.{k}"] for k in "WUb")
    xs = np.array([0.3, -0.7, 0.5, 0.1])
    h = np.zeros(3)
    expected = []
    prev = 0.0
    for x in xs:
        h = gru_step(np.array([prev, x]), h, W, U, b)
        prev = x
        expected.append(float(g.params["out.W"][0] @ h + g.params["out.b"][0]))
    out, _ = render_file(g, AudioBuffer(xs))
    np.testing.assert_allclose(out.samples, expected, atol=1e-12)


def test_zero_network_outputs_zero():
    g = build_gru_fx(GruFxSpec(2, 3), seed=0)
    for p in g.params.values():
        p[...] = 0.0
    out, clips = render_file(g, noise(100))
    assert not out.samples.any() and clips == 0


def test_stream_equals_offline_bitwise():
    g = build_gru_fx(GruFxSpec(2, 8), seed=5)
    buf = noise(44100, 2)
    offline, _ = render_file(g, buf)
    engine = FxEngine(g)
    streamed = np.array([process_sample(engine, x) for x in buf.samples])
    assert np.array_equal(streamed, offline.samples)
    # block size does not matter either
    engine.state.reset()
    out = np.empty(len(buf))
    for i in range(0, len(buf), 300):
        engine.process_block(buf.samples[i:i + 300], out[i:i + 300])
    assert np.array_equal(out, offline.samples)


def test_output_clipped_and_counted():
    g = build_gru_fx(GruFxSpec(1, 1, "linear"), seed=0)
    g.params["out.b"][...] = 5.0
    out, clips = render_file(g, noise(20))
    assert np.all(out.samples == 1.0) and clips == 20


def test_bypass_is_transparent():
    x = 0.9 * np.sin(2 * np.pi * 1000 * np.arange(4410) / 44100)
    out, _ = render_file(bypass_graph(GruFxSpec()), AudioBuffer(x))
    np.testing.assert_allclose(out.samples, x, atol=1e-7)


def test_saved_model_renders_identically(tmp_path):
    g = build_gru_fx(GruFxSpec(2, 4, base_width=5), seed=9)
    save_model(tmp_path / "fx.bkm", g)
    g2, _, _ = load_model(tmp_path / "fx.bkm")
    buf = noise(500)
    assert np.array_equal(render_file(g, buf)[0].samples, render_file(g2, buf)[0].samples)


def test_benchmark_report():
    r = benchmark_stream(build_gru_fx(GruFxSpec(1, 4, base_width=4)), seconds=0.2)
    assert r.samples == 8820 and r.samples_per_sec > 0
    assert r.realtime_factor == pytest.approx(r.samples_per_sec / 44100)
    with pytest.raises(ConfigError):
        benchmark_stream(build_gru_fx(GruFxSpec(1, 1)), seconds=0)


def test_wider_model_is_slower():
    fast = benchmark_stream(build_gru_fx(GruFxSpec(scaler=1)), seconds=0.5)
    slow = benchmark_stream(build_gru_fx(GruFxSpec(scaler=2)), seconds=0.5)
    assert slow.samples_per_sec < fast.samples_per_sec
