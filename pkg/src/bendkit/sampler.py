"""Decent Sampler preset (``.dspreset``) writer and reader.

Only this subset of the format is emitted::

    <DecentSampler minVersion="1.0.0">
      <groups>
        <group name=... attack=... decay=... sustain=... release=...>
          <sample path=... rootNote=... loNote=... hiNote=...
                  [loopStart=... loopEnd=... loopEnabled="true" loopCrossfade="0"]/>
          ...
        </group>
      </groups>
    </DecentSampler>

Attributes are written in the order shown. Envelope times are seconds,
sustain is a 0..1 level, sample paths are relative with forward slashes.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from .errors import ConfigError, DataError, ParseError

ROOT_TAG = "DecentSampler"
ENVELOPE_KEYS = ("attack", "decay", "sustain", "release")
SAMPLE_KEYS = ("path", "rootNote", "loNote", "hiNote")
LOOP_KEYS = ("loopStart", "loopEnd", "loopEnabled", "loopCrossfade")


@dataclass(frozen=True)
class Envelope:
    attack: float = 0.01
    decay: float = 0.1
    sustain: float = 1.0
    release: float = 0.3

    def __post_init__(self):
        for k in ("attack", "decay", "release"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"envelope {k} must be a finite time >= 0, got {v}")
        if not (math.isfinite(self.sustain) and 0 <= self.sustain <= 1):
            raise ConfigError(f"envelope sustain must be in [0, 1], got {self.sustain}")


@dataclass(frozen=True)
class SampleZone:
    path: str
    root_note: int
    lo_note: int
    hi_note: int
    # loop region in samples; None means no loop
    loop: tuple[int, int] | None = None


@dataclass
class SamplerInstrumentSpec:
    name: str
    entries: list[SampleZone]
    envelope: Envelope = field(default_factory=Envelope)

    def validate(self) -> None:
        if not self.entries:
            raise DataError("instrument has no samples")
        for z in self.entries:
            if not all(0 <= n <= 127 for n in (z.root_note, z.lo_note, z.hi_note)):
                raise DataError(f"note numbers of {z.path!r} outside 0..127")
            if z.lo_note > z.hi_note:
                raise DataError(f"zone of {z.path!r} has loNote > hiNote")
            if z.loop is not None and not 0 <= z.loop[0] < z.loop[1]:
                raise DataError(f"bad loop points {z.loop} for {z.path!r}")
            if "\\" in z.path or PurePosixPath(z.path).is_absolute():
                raise DataError(f"sample path must be relative with forward slashes: {z.path!r}")
        zones = sorted((z.lo_note, z.hi_note) for z in self.entries)
        for (lo_a, hi_a), (lo_b, _) in zip(zones, zones[1:]):
            if lo_b <= hi_a:
                raise DataError(f"key zones overlap at note {lo_b}")
            if lo_b != hi_a + 1:
                raise DataError(f"key zones leave a gap between {hi_a} and {lo_b}")


def map_samples(paths: list[str], strategy: str = "even_split", root_note: int | None = None) -> list[SampleZone]:
    """Spread samples over MIDI notes 0..127.

    ``even_split`` gives each sample one contiguous zone of near-equal width
    rooted at the zone's centre (a single sample covers the whole keyboard,
    rooted at 60 unless ``root_note`` says otherwise). ``round_robin_chromatic``
    gives every key its own zone and cycles through the samples key by key,
    each sample playing unshifted at its key.
    """
    paths = [str(p).replace("\\", "/") for p in paths]
    if not paths:
        raise DataError("no samples to map")
    n = len(paths)
    if strategy == "even_split":
        if n > 128:
            raise ConfigError("even_split supports at most 128 samples")
        if n == 1:
            return [SampleZone(paths[0], 60 if root_note is None else root_note, 0, 127)]
        bounds = [i * 128 // n for i in range(n + 1)]
        return [
            SampleZone(p, (lo + hi - 1) // 2, lo, hi - 1)
            for p, lo, hi in zip(paths, bounds, bounds[1:])
        ]
    if strategy == "round_robin_chromatic":
        return [SampleZone(paths[k % n], k, k, k) for k in range(128)]
    raise ConfigError(f"unknown mapping strategy {strategy!r}")


def _num(v) -> str:
    return repr(float(v))


def emit_preset(spec: SamplerInstrumentSpec) -> bytes:
    spec.validate()
    root = ET.Element(ROOT_TAG, {"minVersion": "1.0.0"})
    groups = ET.SubElement(root, "groups")
    env = spec.envelope
    group = ET.SubElement(groups, "group", {
        "name": spec.name,
        "attack": _num(env.attack),
        "decay": _num(env.decay),
        "sustain": _num(env.sustain),
        "release": _num(env.release),
    })
    for z in spec.entries:
        attrs = {"path": z.path, "rootNote": str(z.root_note), "loNote": str(z.lo_note), "hiNote": str(z.hi_note)}
        if z.loop is not None:
            attrs.update(loopStart=str(z.loop[0]), loopEnd=str(z.loop[1]), loopEnabled="true", loopCrossfade="0")
        ET.SubElement(group, "sample", attrs)
    ET.indent(root, space="  ")
    body = ET.tostring(root, encoding="unicode")
    return ('<?xml version="1.0" encoding="UTF-8"?>\n' + body + "\n").encode("utf-8")


def _int(el, key):
    try:
        return int(el.attrib[key])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"<{el.tag}> needs integer attribute {key!r}") from exc


def parse_preset(data: bytes) -> SamplerInstrumentSpec:
    """Read back a preset written by :func:`emit_preset`, checking its shape."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise ParseError(f"malformed preset XML: {exc}") from exc
    if root.tag != ROOT_TAG:
        raise ParseError(f"root element is <{root.tag}>, expected <{ROOT_TAG}>")
    groups = root.findall("groups")
    if len(groups) != 1 or len(groups[0].findall("group")) != 1:
        raise ParseError("preset needs exactly one <groups> with one <group>")
    group = groups[0].find("group")
    if [c.tag for c in root] != ["groups"]:
        raise ParseError("unexpected elements under the root")
    extra = set(group.attrib) - {"name", *ENVELOPE_KEYS}
    if extra:
        raise ParseError(f"unknown <group> attributes {sorted(extra)}")
    try:
        env = Envelope(*(float(group.attrib[k]) for k in ENVELOPE_KEYS))
    except KeyError as exc:
        raise ParseError(f"<group> lacks envelope attribute {exc}") from exc
    entries = []
    for el in group.findall("sample"):
        if "path" not in el.attrib:
            raise ParseError("<sample> without path")
        extra = set(el.attrib) - {*SAMPLE_KEYS, *LOOP_KEYS}
        if extra:
            raise ParseError(f"unknown <sample> attributes {sorted(extra)}")
        loop = None
        if "loopStart" in el.attrib:
            loop = (_int(el, "loopStart"), _int(el, "loopEnd"))
        entries.append(SampleZone(el.attrib["path"], _int(el, "rootNote"), _int(el, "loNote"), _int(el, "hiNote"), loop))
    spec = SamplerInstrumentSpec(group.attrib.get("name", ""), entries, env)
    spec.validate()
    return spec


def write_instrument(out_dir, spec: SamplerInstrumentSpec, filename: str | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / (filename or f"{spec.name or 'instrument'}.dspreset")
    data = emit_preset(spec)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise DataError(f"cannot write preset {path}: {exc}") from exc
    return path
