"""Standard MIDI File reading and writing, note tables and composer corpora."""

from __future__ import annotations

import logging
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError

log = logging.getLogger(__name__)

DEFAULT_TEMPO_US = 500_000  # 120 bpm


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset: float
    duration: float
    pitch: int
    velocity: int

    def __post_init__(self):
        if not (self.onset >= 0 and np.isfinite(self.onset)):
            raise DataError(f"onset must be >= 0, got {self.onset}")
        if not (self.duration > 0 and np.isfinite(self.duration)):
            raise DataError(f"duration must be > 0, got {self.duration}")
        if not 0 <= self.pitch <= 127:
            raise DataError(f"pitch {self.pitch} outside 0..127")
        if not 1 <= self.velocity <= 127:
            raise DataError(f"velocity {self.velocity} outside 1..127")

    @property
    def offset(self) -> float:
        return self.onset + self.duration


def _sort_key(item):
    ev = item[0]
    return (ev.onset, ev.pitch)


@dataclass
class NoteDataset:
    """Time-ordered notes, each tagged with its source (file or composer)."""

    events: list[NoteEvent]
    source_labels: list[str] = field(default_factory=list)
    tempo_bpm: float = 120.0
    unclosed_notes: int = 0
    # generated sequences: number of predicted values forced into range
    clamp_count: int = 0

    def __post_init__(self):
        if not self.source_labels:
            self.source_labels = [""] * len(self.events)
        if len(self.source_labels) != len(self.events):
            raise DataError("one source label per event required")
        pairs = sorted(zip(self.events, self.source_labels), key=_sort_key)
        self.events = [p[0] for p in pairs]
        self.source_labels = [p[1] for p in pairs]

    def __len__(self):
        return len(self.events)

    def to_array(self) -> np.ndarray:
        """``(n, 4)`` array of onset, duration, pitch, velocity."""
        return np.array([[e.onset, e.duration, e.pitch, e.velocity] for e in self.events], dtype=np.float64).reshape(-1, 4)

    @classmethod
    def concatenate(cls, parts: list["NoteDataset"]) -> "NoteDataset":
        events, labels = [], []
        for p in parts:
            events += p.events
            labels += p.source_labels
        tempo = parts[0].tempo_bpm if parts else 120.0
        return cls(events, labels, tempo, sum(p.unclosed_notes for p in parts))


# reading


def _read_varlen(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise ParseError("variable-length quantity runs past chunk end", offset=pos)
        b = data[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos
    raise ParseError("variable-length quantity longer than 4 bytes", offset=pos)


def _read_track(data: bytes, pos: int, end: int):
    """Yield (tick, kind, payload) tuples for one MTrk chunk body."""
    tick, status = 0, None
    events = []
    while pos < end:
        delta, pos = _read_varlen(data, pos, end)
        tick += delta
        if pos >= end:
            raise ParseError("event truncated", offset=pos)
        b = data[pos]
        if b == 0xFF:
            if pos + 2 > end:
                raise ParseError("meta event truncated", offset=pos)
            mtype = data[pos + 1]
            length, p2 = _read_varlen(data, pos + 2, end)
            if p2 + length > end:
                raise ParseError("meta event runs past chunk end", offset=pos)
            events.append((tick, "meta", (mtype, data[p2:p2 + length])))
            pos = p2 + length
            if mtype == 0x2F:
                break
            continue
        if b in (0xF0, 0xF7):
            length, p2 = _read_varlen(data, pos + 1, end)
            pos = p2 + length
            continue
        if b & 0x80:
            status = b
            pos += 1
        elif status is None:
            raise ParseError("running status without a prior status byte", offset=pos)
        kind = status & 0xF0
        nbytes = 1 if kind in (0xC0, 0xD0) else 2
        if pos + nbytes > end:
            raise ParseError("channel event truncated", offset=pos)
        args = data[pos:pos + nbytes]
        pos += nbytes
        if kind in (0x80, 0x90):
            events.append((tick, "note", (kind, status & 0x0F, args[0], args[1])))
    return events, tick


def parse_midi(data: bytes, label: str = "") -> NoteDataset:
    """Parse a format 0 or 1 Standard MIDI File into a :class:`NoteDataset`.

    A note-on with velocity 0 counts as note-off. Repeated note-ons of the
    same pitch on one channel are closed first-in first-out. Notes still
    sounding when their track ends are closed there and counted in
    ``unclosed_notes``.
    """
    data = bytes(data)
    if len(data) < 14 or data[:4] != b"MThd":
        raise ParseError("missing MThd header", offset=0)
    (hlen,) = struct.unpack_from(">I", data, 4)
    if hlen < 6 or 8 + hlen > len(data):
        raise ParseError(f"bad header length {hlen}", offset=4)
    fmt, ntracks, division = struct.unpack_from(">HHh", data, 8)
    if fmt not in (0, 1):
        raise ParseError(f"unsupported SMF format {fmt}", offset=8)

    pos = 8 + hlen
    tracks = []
    while pos < len(data) and len(tracks) < ntracks:
        if pos + 8 > len(data):
            raise ParseError("chunk header truncated", offset=pos)
        cid = data[pos:pos + 4]
        (clen,) = struct.unpack_from(">I", data, pos + 4)
        body = pos + 8
        if body + clen > len(data):
            raise ParseError(f"chunk {cid!r} runs past end of file", offset=pos)
        if cid == b"MTrk":
            tracks.append(_read_track(data, body, body + clen))
        pos = body + clen
    if len(tracks) != ntracks:
        raise ParseError(f"header declares {ntracks} tracks, found {len(tracks)}", offset=pos)

    if division < 0:
        fps = -(division >> 8)
        ticks_per_frame = division & 0xFF
        seconds = lambda tick: tick / (fps * ticks_per_frame)
        tempo_bpm = 120.0
    else:
        if division == 0:
            raise ParseError("division of zero ticks per quarter", offset=12)
        tempos = sorted(
            (t, int.from_bytes(p[1], "big"))
            for evs, _ in tracks for t, kind, p in evs
            if kind == "meta" and p[0] == 0x51 and len(p[1]) == 3
        )
        seconds = _tempo_map(tempos, division)
        first = tempos[0][1] if tempos and tempos[0][0] == 0 else DEFAULT_TEMPO_US
        tempo_bpm = 60e6 / first

    events, unclosed, dropped = [], 0, 0
    for evs, end_tick in tracks:
        open_notes = defaultdict(deque)
        for tick, kind, payload in evs:
            if kind != "note":
                continue
            status, ch, pitch, vel = payload
            key = (ch, pitch)
            if status == 0x90 and vel > 0:
                open_notes[key].append((tick, vel))
            elif open_notes[key]:
                on_tick, on_vel = open_notes[key].popleft()
                events.append((on_tick, tick, pitch, on_vel))
        for (ch, pitch), q in open_notes.items():
            for on_tick, on_vel in q:
                unclosed += 1
                events.append((on_tick, end_tick, pitch, on_vel))

    notes = []
    for on_tick, off_tick, pitch, vel in events:
        t0, t1 = seconds(on_tick), seconds(off_tick)
        if t1 <= t0:
            dropped += 1
            continue
        notes.append(NoteEvent(t0, t1 - t0, pitch, vel))
    if unclosed:
        log.warning("%s: %d note(s) without note-off closed at track end", label or "midi", unclosed)
    if dropped:
        log.warning("%s: dropped %d zero-length note(s)", label or "midi", dropped)
    if not notes:
        raise DataError(f"no notes found in {label or 'MIDI data'}")
    return NoteDataset(notes, [label] * len(notes), tempo_bpm, unclosed)


def _tempo_map(tempos, division):
    """Tick -> seconds under a piecewise-constant tempo map."""
    points = [(0, 0.0, DEFAULT_TEMPO_US)]
    for tick, us in tempos:
        t0, s0, us0 = points[-1]
        s = s0 + (tick - t0) * us0 / (1e6 * division)
        if tick == t0:
            points[-1] = (t0, s0, us)
        else:
            points.append((tick, s, us))
    ticks = [p[0] for p in points]

    def seconds(tick):
        i = int(np.searchsorted(ticks, tick, side="right")) - 1
        t0, s0, us = points[i]
        return s0 + (tick - t0) * us / (1e6 * division)

    return seconds


def read_midi_file(path) -> NoteDataset:
    path = Path(path)
    return parse_midi(path.read_bytes(), label=path.name)


# writing


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def emit_midi(events, ticks_per_quarter: int = 480, tempo_bpm: float = 120.0) -> bytes:
    """Write notes as a single-track format 0 file on channel 1."""
    if isinstance(events, NoteDataset):
        events = events.events
    events = list(events)
    if not events:
        raise DataError("cannot write a MIDI file with no notes")
    if ticks_per_quarter < 1 or ticks_per_quarter > 0x7FFF:
        raise ConfigError(f"ticks_per_quarter {ticks_per_quarter} out of range")
    if not tempo_bpm > 0:
        raise ConfigError(f"tempo must be > 0, got {tempo_bpm}")
    tempo_us = int(round(60e6 / tempo_bpm))
    ticks_per_second = ticks_per_quarter * 1e6 / tempo_us

    msgs = []
    for ev in events:
        on = int(round(ev.onset * ticks_per_second))
        off = max(on + 1, int(round(ev.offset * ticks_per_second)))
        # note-offs sort before note-ons at the same tick
        msgs.append((on, 1, ev.pitch, bytes([0x90, ev.pitch, ev.velocity])))
        msgs.append((off, 0, ev.pitch, bytes([0x80, ev.pitch, 0])))
    msgs.sort(key=lambda m: m[:3])

    body = bytearray(b"\x00\xff\x51\x03" + tempo_us.to_bytes(3, "big"))
    last = 0
    for tick, _, _, raw in msgs:
        body += _varlen(tick - last) + raw
        last = tick
    body += b"\x00\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, ticks_per_quarter)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


# corpora


@dataclass
class CorpusManifest:
    entries: list[tuple[Path, str]]
    root: Path = Path(".")

    @classmethod
    def read(cls, path) -> "CorpusManifest":
        """Read ``path<TAB>composer`` lines; paths are relative to the manifest."""
        path = Path(path)
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        root = path.parent
        entries = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].strip():
                raise ParseError(f"{path}:{lineno}: expected 'path<TAB>composer'")
            entries.append((Path(parts[0].strip()), parts[1].strip()))
        return cls(entries, root)

    def resolve(self, p: Path) -> Path:
        return p if p.is_absolute() else self.root / p

    @property
    def composers(self) -> list[str]:
        return sorted({c for _, c in self.entries})


def _fold(name: str) -> str:
    return name.strip().casefold()


def get_data_for_composer(manifest: CorpusManifest, composers: list[str]) -> NoteDataset:
    """All notes from manifest files whose composer matches any requested name."""
    if not composers:
        raise ConfigError("at least one composer name required")
    wanted = {_fold(c) for c in composers}
    picked = [(p, c) for p, c in manifest.entries if _fold(c) in wanted]
    if not picked:
        raise DataError(
            f"no files for composers {list(composers)}; available: {', '.join(manifest.composers)}"
        )
    parts = []
    for p, c in picked:
        full = manifest.resolve(p)
        if not full.exists():
            raise DataError(f"manifest entry not found: {full}")
        ds = parse_midi(full.read_bytes(), label=str(p))
        ds.source_labels = [c] * len(ds)
        parts.append(ds)
    return NoteDataset.concatenate(parts)


# features

FEATURES = ("pitch", "onset", "duration", "velocity")


@dataclass
class FeatureScalers:
    """Per-column min-max scalers for the pitch, onset-interval, duration and
    velocity features. Constant columns map to 0.5 and are flagged."""

    minimum: np.ndarray
    maximum: np.ndarray
    zero_width: np.ndarray

    def transform(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        span = np.where(self.zero_width, 1.0, self.maximum - self.minimum)
        out = (raw - self.minimum) / span
        return np.where(self.zero_width, 0.5, out)

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        scaled = np.asarray(scaled, dtype=np.float64)
        span = np.where(self.zero_width, 0.0, self.maximum - self.minimum)
        return np.where(self.zero_width, self.minimum, self.minimum + scaled * span)

    def to_dict(self) -> dict:
        return {
            "minimum": self.minimum.tolist(),
            "maximum": self.maximum.tolist(),
            "zero_width": self.zero_width.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "FeatureScalers":
        return cls(np.array(d["minimum"], dtype=np.float64), np.array(d["maximum"], dtype=np.float64),
                   np.array(d["zero_width"], dtype=bool))


def raw_features(dataset: NoteDataset) -> np.ndarray:
    """``(n, 4)`` columns pitch, inter-onset interval, duration, velocity.

    The first interval is measured from time zero, so cumulative sums of the
    interval column recover the absolute onsets.
    """
    arr = dataset.to_array()
    ioi = np.diff(arr[:, 0], prepend=0.0)
    return np.column_stack([arr[:, 2], ioi, arr[:, 1], arr[:, 3]])


def normalize_features(dataset: NoteDataset) -> tuple[np.ndarray, FeatureScalers]:
    if len(dataset) == 0:
        raise DataError("cannot normalize an empty dataset")
    raw = raw_features(dataset)
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    scalers = FeatureScalers(lo, hi, hi == lo)
    return scalers.transform(raw), scalers


def denormalize_features(features: np.ndarray, scalers: FeatureScalers) -> NoteDataset:
    """Invert :func:`normalize_features` back to notes (no clamping)."""
    raw = scalers.inverse(features)
    onsets = np.cumsum(raw[:, 1])
    events = [
        NoteEvent(float(t), float(d), int(round(p)), int(round(v)))
        for t, p, d, v in zip(onsets, raw[:, 0], raw[:, 2], raw[:, 3])
    ]
    return NoteDataset(events)
