"""Music-ML toolkit: note-sequence, sound-design, audio-effect and wavetable
networks on a small numpy network engine, plus a graphic-score generator."""

__version__ = "0.1.0"
