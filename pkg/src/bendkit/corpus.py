"""Small synthetic corpus shipped with the package so every pipeline can run offline.

It holds a few generated WAV files (sines, a one-cycle-per-1024-samples
tone and decaying noise), a three-voice MIDI file and a manifest naming its
composer. :func:`write_synthetic_corpus` rebuilds the files byte for byte.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .dsp import AudioBuffer, write_wav
from .midi import NoteEvent, emit_midi

SAMPLE_RATE = 44100
COMPOSER = "Synthetic"


def data_dir() -> Path:
    """Directory of the bundled corpus inside the installed package."""
    return Path(str(resources.files("bendkit") / "data"))


def _audio() -> dict[str, AudioBuffer]:
    n = SAMPLE_RATE // 2
    t = np.arange(n) / SAMPLE_RATE
    fade = np.minimum(1.0, np.minimum(t, t[::-1]) / 0.01)
    noise = np.random.default_rng(0).uniform(-1, 1, n) * np.exp(-t / 0.08) * 0.8
    return {
        "sine_220.wav": AudioBuffer(0.6 * np.sin(2 * np.pi * 220 * t) * fade, SAMPLE_RATE),
        "sine_440.wav": AudioBuffer(0.6 * np.sin(2 * np.pi * 440 * t) * fade, SAMPLE_RATE),
        "cycle_1024.wav": AudioBuffer(0.7 * np.sin(2 * np.pi * np.arange(n) / 1024), SAMPLE_RATE),
        "noise_hit.wav": AudioBuffer(noise, SAMPLE_RATE),
    }


def _three_voices() -> list[NoteEvent]:
    """Four bars at 120 bpm: whole-note bass, quarter-note middle voice, eighth-note tune."""
    beat = 0.5
    bass = [48, 43, 45, 41]
    chords = [(55, 60, 64, 60), (55, 59, 62, 59), (57, 60, 64, 60), (57, 60, 65, 60)]
    tune = [72, 74, 76, 79, 76, 74, 72, 71, 72, 74, 76, 77, 79, 77, 76, 74]
    events = []
    for bar in range(4):
        start = bar * 4 * beat
        events.append(NoteEvent(start, 4 * beat, bass[bar], 70))
        for i, p in enumerate(chords[bar]):
            events.append(NoteEvent(start + i * beat, beat, p, 60))
        for i in range(8):
            events.append(NoteEvent(start + i * beat / 2, beat / 2, tune[(bar * 8 + i) % 16], 90))
    return events


def write_synthetic_corpus(out_dir) -> Path:
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "midi").mkdir(parents=True, exist_ok=True)
    for name, buf in _audio().items():
        (out / "audio" / name).write_bytes(write_wav(buf, 16))
    (out / "midi" / "three_voices.mid").write_bytes(emit_midi(_three_voices(), 480, 120.0))
    (out / "manifest.tsv").write_text(f"# path\tcomposer\nmidi/three_voices.mid\t{COMPOSER}\n", encoding="utf-8")
    return out
