"""First-order Markov chains over pitch class, rhythm and octave.

The three chains are learned independently from consecutive notes. Pitch
class and octave recombine into an absolute pitch when sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, ParseError
from ..midi import NoteDataset

# note values in quarter-note beats: whole ... sixteenth, with dotted values
RHYTHM_BEATS = (4.0, 3.0, 2.0, 1.5, 1.0, 0.75, 0.5, 0.375, 0.25)
CHAINS = ("pitch", "rhythm", "octave")
HEADER = "# bendkit markov v1"


def quantize_rhythm(duration: float, tempo_bpm: float) -> float:
    """Nearest note value (in beats) to ``duration`` seconds, compared on a log scale."""
    beats = duration * tempo_bpm / 60.0
    logs = np.log(np.asarray(RHYTHM_BEATS))
    return RHYTHM_BEATS[int(np.argmin(np.abs(logs - np.log(beats))))]


@dataclass
class Chain:
    states: list  # state labels, row/column order
    matrix: np.ndarray  # row-stochastic transition probabilities
    initial: np.ndarray  # marginal state frequencies
    counts: np.ndarray  # raw bigram tallies

    def index(self, state) -> int:
        try:
            return self.states.index(state)
        except ValueError as exc:
            raise DataError(f"state {state!r} not in chain {self.states}") from exc


def _chain(seq: list, states: list) -> Chain:
    idx = {s: i for i, s in enumerate(states)}
    k = len(states)
    counts = np.zeros((k, k))
    for a, b in zip(seq, seq[1:]):
        counts[idx[a], idx[b]] += 1
    rows = counts.sum(axis=1, keepdims=True)
    # rows never left by a transition fall back to uniform
    matrix = np.where(rows > 0, counts / np.where(rows > 0, rows, 1), 1.0 / k)
    initial = np.bincount([idx[s] for s in seq], minlength=k) / len(seq)
    return Chain(list(states), matrix, initial, counts)


@dataclass
class TransitionTable:
    pitch: Chain
    rhythm: Chain
    octave: Chain

    def chains(self) -> dict[str, Chain]:
        return {"pitch": self.pitch, "rhythm": self.rhythm, "octave": self.octave}


def learn_from_midi(dataset: NoteDataset) -> TransitionTable:
    """Bigram tables over the notes of ``dataset`` in onset order.

    Pitch classes always use all 12 states. Rhythm and octave chains only
    contain the values that occur, sorted (rhythms longest first).
    """
    if len(dataset) < 2:
        raise DataError(f"need at least 2 notes to learn transitions, got {len(dataset)}")
    events = dataset.events
    pcs = [e.pitch % 12 for e in events]
    octaves = [e.pitch // 12 - 1 for e in events]
    rhythms = [quantize_rhythm(e.duration, dataset.tempo_bpm) for e in events]
    return TransitionTable(
        _chain(pcs, list(range(12))),
        _chain(rhythms, sorted(set(rhythms), reverse=True)),
        _chain(octaves, sorted(set(octaves))),
    )


class MarkovSampler:
    """Seeded walk over the three chains, each starting from its marginal distribution."""

    def __init__(self, table: TransitionTable, seed: int = 0):
        self.table = table
        self.rng = np.random.default_rng(seed)
        self.state: dict[str, int | None] = {c: None for c in CHAINS}
        self._chains = table.chains()
        self._cum = {c: np.cumsum(ch.matrix, axis=1) for c, ch in self._chains.items()}
        self._cum_init = {c: np.cumsum(ch.initial) for c, ch in self._chains.items()}

    def _draw(self, cum: np.ndarray) -> int:
        i = int(np.searchsorted(cum, self.rng.random() * cum[-1], side="right"))
        return min(i, len(cum) - 1)

    def next_event(self) -> tuple[int, float, int]:
        """Advance every chain; returns (pitch class, rhythm in beats, octave)."""
        out = []
        for c in CHAINS:
            cur = self.state[c]
            nxt = self._draw(self._cum_init[c] if cur is None else self._cum[c][cur])
            self.state[c] = nxt
            out.append(self._chains[c].states[nxt])
        return int(out[0]), float(out[1]), int(out[2])

    def next_note(self) -> tuple[int, float]:
        """Absolute MIDI pitch (clamped to 0..127) and rhythm in beats."""
        pc, rhythm, octave = self.next_event()
        return int(np.clip(12 * (octave + 1) + pc, 0, 127)), rhythm


# plain-text format


def dumps(table: TransitionTable) -> str:
    """Readable text: per chain its states, initial distribution and matrix rows."""
    lines = [HEADER]
    for name, ch in table.chains().items():
        lines.append(f"[{name}]")
        lines.append("states " + " ".join(repr(s) for s in ch.states))
        lines.append("initial " + " ".join(repr(float(p)) for p in ch.initial))
        for row, counts in zip(ch.matrix, ch.counts):
            lines.append("row " + " ".join(repr(float(p)) for p in row)
                         + " | " + " ".join(str(int(c)) for c in counts))
    return "\n".join(lines) + "\n"


def _num(tok: str):
    try:
        return int(tok)
    except ValueError:
        return float(tok)


def loads(text: str) -> TransitionTable:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != HEADER:
        raise ParseError("not a bendkit Markov table")
    chains, i = {}, 1
    try:
        for name in CHAINS:
            if lines[i] != f"[{name}]":
                raise ParseError(f"expected [{name}] on line {i + 1}, found {lines[i]!r}")
            states = [_num(t) for t in lines[i + 1].split()[1:]]
            initial = np.array([float(t) for t in lines[i + 2].split()[1:]])
            k = len(states)
            rows, counts = [], []
            for ln in lines[i + 3:i + 3 + k]:
                probs, tallies = ln[len("row "):].split("|")
                rows.append([float(t) for t in probs.split()])
                counts.append([float(t) for t in tallies.split()])
            chains[name] = Chain(states, np.array(rows), initial, np.array(counts))
            if chains[name].matrix.shape != (k, k) or initial.shape != (k,):
                raise ParseError(f"chain {name!r} has inconsistent sizes")
            i += 3 + k
    except ParseError:
        raise
    except (IndexError, ValueError) as exc:
        raise ParseError(f"truncated or malformed Markov table: {exc}") from exc
    return TransitionTable(**chains)
