import json

import numpy as np
import pytest

from bendkit.blocks import (
    BlockModelSpec,
    DatasetMixture,
    build_block_model,
    default_seed_block,
    export_sound_set,
    generate_blocks,
    mixture_pairs,
    train_blocks,
)
from bendkit.dsp import AudioBuffer, frame_blocks, read_wav
from bendkit.errors import ConfigError, DataError
from bendkit.nn import TrainConfig
from bendkit.sampler import Envelope, parse_preset


def layer_sequence(graph):
    return [(s.kind, s.width) for s in graph.nodes.values() if s.kind != "input"]


def test_listing_layout():
    g = build_block_model(BlockModelSpec(2, 32, 10, "tanh"), seed=0)
    assert layer_sequence(g) == [("dense", 32), ("dropout", 32), ("dense", 32), ("dropout", 32), ("dense", 10)]


def test_small_layout():
    g = build_block_model(BlockModelSpec(2, 4, 4), seed=0)
    assert layer_sequence(g)[0] == ("dense", 4)
    assert g.forward({"block": np.zeros((3, 4))}).shape == (3, 4)


def test_scalar_predictor():
    g = build_block_model(BlockModelSpec(1, 3, 1), seed=0)
    assert g.forward({"block": np.ones((1, 1))}).shape == (1, 1)


def test_bad_spec():
    with pytest.raises(ConfigError):
        BlockModelSpec(block_size=0)
    with pytest.raises(ConfigError):
        BlockModelSpec(drop_rate=1.0)


def noise(n, seed, rate=8000):
    return AudioBuffer(np.random.default_rng(seed).uniform(-0.5, 0.5, n), rate)


def test_mixture_pair_count_is_union():
    a = [noise(100, 0), noise(57, 1)]
    b = [noise(230, 2)]
    mix = DatasetMixture([("a", a), ("b", b)])
    x, y = mixture_pairs(mix, 10)
    expected = sum(len(frame_blocks(buf, 10)) for buf in a + b)
    assert len(x) == len(y) == expected


def test_mixture_rates_and_emptiness():
    with pytest.raises(DataError):
        DatasetMixture([("a", [])])
    with pytest.raises(DataError):
        DatasetMixture([("a", [noise(10, 0, 8000), noise(10, 0, 16000)])])


def test_no_pairs():
    mix = DatasetMixture([("short", [noise(15, 0)])])
    with pytest.raises(DataError, match="short"):
        train_blocks(build_block_model(BlockModelSpec()), mix, BlockModelSpec(), TrainConfig())


def test_constant_signal_converges():
    mix = DatasetMixture([("dc", [AudioBuffer(np.full(2000, 0.3), 8000)])])
    spec = BlockModelSpec(2, 32, 10, drop_rate=0.5)
    g = build_block_model(spec, seed=0)
    report = train_blocks(g, mix, spec, TrainConfig(learning_rate=0.01, epochs=100, batch_size=32))
    assert report.final_loss < 1e-6
    x, y = mixture_pairs(mix, 10)
    assert np.mean((g.forward({"block": x}) - y) ** 2) < 1e-6


def test_training_reproducible():
    mix = DatasetMixture([("n", [noise(500, 3)])])
    spec = BlockModelSpec(1, 8, 10)
    runs = []
    for _ in range(2):
        g = build_block_model(spec, seed=1)
        runs.append(train_blocks(g, mix, spec, TrainConfig(epochs=3, batch_size=4, seed=5)).losses)
    assert runs[0] == runs[1]


def test_dropout_zero_train_equals_infer():
    g = build_block_model(BlockModelSpec(2, 8, 5, drop_rate=0.0), seed=0)
    x = np.random.default_rng(0).normal(size=(4, 5))
    np.testing.assert_array_equal(
        g.forward({"block": x}, training=True, rng=np.random.default_rng(1)), g.forward({"block": x}))


def test_rollout_chain_and_bounds():
    g = build_block_model(BlockModelSpec(1, 8, 6, output_activation="linear"), seed=2)
    for k in g.params:
        g.params[k] *= 4  # push predictions outside [-1, 1]
    seed = np.linspace(-1, 1, 6)
    blocks, clipped = generate_blocks(g, seed, 8, sample_rate=8000)
    assert len(blocks) == 8 and clipped > 0
    prev = seed
    for b in blocks:
        assert b.sample_rate == 8000
        assert np.all(np.abs(b.samples) <= 1.0)
        expected = np.clip(g.forward({"block": prev[None]})[0], -1, 1)
        np.testing.assert_array_equal(b.samples, expected)
        prev = b.samples


def test_single_block_is_one_forward_pass():
    g = build_block_model(BlockModelSpec(1, 8, 6), seed=2)
    seed = np.linspace(-0.5, 0.5, 6)
    blocks, _ = generate_blocks(g, seed, 1)
    np.testing.assert_array_equal(blocks[0].samples, g.forward({"block": seed[None]})[0])


def test_rollout_deterministic_and_infer_mode():
    g = build_block_model(BlockModelSpec(2, 8, 6, drop_rate=0.5), seed=2)
    seed = np.linspace(-0.5, 0.5, 6)
    a, _ = generate_blocks(g, seed, 4)
    b, _ = generate_blocks(g, seed, 4)
    assert all(np.array_equal(p.samples, q.samples) for p, q in zip(a, b))


def test_zero_blocks():
    g = build_block_model(BlockModelSpec(1, 2, 3), seed=0)
    with pytest.raises(ConfigError):
        generate_blocks(g, np.zeros(3), 0)
    with pytest.raises(DataError):
        generate_blocks(g, np.zeros(4), 1)


def test_seed_block_choices():
    mix = DatasetMixture([("a", [noise(100, 0)]), ("b", [noise(100, 1)])])
    s = default_seed_block(mix, 10, seed=4)
    assert any(np.array_equal(s, b.samples[:10]) for _, b in mix.buffers())
    np.testing.assert_array_equal(s, default_seed_block(mix, 10, seed=4))
    n = default_seed_block(mix, 10, seed=4, noise=True)
    assert n.shape == (10,) and np.all(np.abs(n) <= 1)


def test_five_one_second_files(tmp_path):
    spec = BlockModelSpec(1, 4, 44100)
    g = build_block_model(spec, seed=0)
    blocks, clipped = generate_blocks(g, np.zeros(44100), 5)
    export_sound_set(blocks, tmp_path, Envelope(0.1, 0.2, 0.8, 0.5), clip_count=clipped,
                     provenance={"seed": 0})
    wavs = sorted(p.name for p in tmp_path.glob("*.wav"))
    assert wavs == [f"gen_{i:03d}.wav" for i in range(5)]
    for name in wavs:
        buf = read_wav((tmp_path / name).read_bytes())
        assert buf.sample_rate == 44100 and len(buf) == 44100
    preset = parse_preset((tmp_path / "generated.dspreset").read_bytes())
    assert {z.path for z in preset.entries} == set(wavs)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["files"] == wavs and manifest["provenance"] == {"seed": 0}


def test_export_empty(tmp_path):
    with pytest.raises(DataError):
        export_sound_set([], tmp_path)
