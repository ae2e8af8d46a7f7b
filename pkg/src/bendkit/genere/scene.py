"""Declarative score scenes: a JSON-friendly dict that fully describes a page.

A scene lists the page setup, text, notes and lines explicitly, so rendering
it needs no randomness. Random layouts are produced by generator functions
that return such a dict from a seed.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import ConfigError, DataError, ParseError
from .canvas import ScoreCanvas, create_canvas, odd_page_margins, uniform_margins
from .markov import MarkovSampler, TransitionTable
from .notation import (
    NOTEHEAD_TYPES,
    add_text,
    apply_treble_clef,
    draw_line_across_notes,
    place_notehead,
)


def listing_scene(seed: int = 0) -> dict:
    """Nine systems of five random noteheads each, joined by one blue line.

    Pitches are drawn from 58..79, each with a random sharp/flat spelling
    and notehead type. Positions are sorted within each system. The line
    runs through the first note of every system.
    """
    rng = np.random.default_rng(seed)
    pitches = rng.integers(58, 80, size=45)
    spellings = rng.choice(["sharp", "flat"], size=45)
    hpos = np.sort((rng.random(45) * 0.8 + 0.1).reshape(9, 5), axis=1)
    heads = rng.choice(NOTEHEAD_TYPES, size=45)
    systems = np.repeat(np.arange(9), 5)
    notes = [
        {"system": int(systems[i]), "hpos": float(hpos[systems[i], i % 5]), "pitch": int(pitches[i]),
         "accidental": str(spellings[i]), "notehead": str(heads[i])}
        for i in range(45)
    ]
    return {
        "page": "A4", "orientation": "portrait", "systems": 9, "indentation": True, "dpi": 100,
        "clef": "treble",
        "title": "This Kind of Graphic Score",
        "composer": "You", "composer_align": 4.75,
        "instrument": "Instrument Name",
        "notes": notes,
        "lines": [{"notes": list(range(0, 45, 5)), "color": "blue", "width": 1}],
    }


def markov_scene(table: TransitionTable, seed: int = 0, systems: int = 9, per_system: int = 8,
                 title: str = "Markov Model In Action") -> dict:
    """Notes sampled from ``table``; longer rhythms leave more room after a note."""
    sampler = MarkovSampler(table, seed)
    notes = []
    for s in range(systems):
        drawn = [sampler.next_note() for _ in range(per_system)]
        widths = np.array([r for _, r in drawn])
        starts = np.concatenate([[0.0], np.cumsum(widths)[:-1]]) / widths.sum()
        for (pitch, _), x in zip(drawn, starts):
            notes.append({"system": s, "hpos": float(0.05 + 0.9 * x), "pitch": pitch,
                          "accidental": "sharp", "notehead": "normal"})
    return {
        "page": "A4", "orientation": "portrait", "systems": systems, "indentation": True, "dpi": 100,
        "clef": "treble", "title": title, "composer": "Composer Name", "composer_align": 4.75,
        "instrument": "Instrument Name", "notes": notes, "lines": [],
    }


def render_scene(scene: dict) -> ScoreCanvas:
    margins = scene.get("margins", "uniform")
    if margins not in ("uniform", "odd_pages_wider"):
        raise ConfigError(f"margins must be 'uniform' or 'odd_pages_wider', got {margins!r}")
    canvas = create_canvas(
        scene.get("page", "A4"), scene.get("orientation", "portrait"), int(scene.get("systems", 9)),
        bool(scene.get("indentation", True)), int(scene.get("dpi", 100)), int(scene.get("page_index", 1)),
        odd_page_margins() if margins == "odd_pages_wider" else uniform_margins,
    )
    if scene.get("clef", "treble") == "treble":
        apply_treble_clef(canvas, on_all=True)
    if scene.get("title"):
        add_text(canvas, "title", scene["title"])
    if scene.get("composer"):
        add_text(canvas, "composer", scene["composer"], float(scene.get("composer_align", 4.75)))
    if scene.get("instrument"):
        add_text(canvas, "instrument", scene["instrument"])
    try:
        placed = [place_notehead(canvas, int(n["system"]), float(n["hpos"]), int(n["pitch"]),
                                 n.get("accidental", "sharp"), n.get("notehead", "normal"))
                  for n in scene.get("notes", [])]
        for line in scene.get("lines", []):
            draw_line_across_notes(canvas, [placed[i] for i in line["notes"]],
                                   line.get("color", "blue"), int(line.get("width", 1)))
    except (KeyError, IndexError, TypeError) as exc:
        raise DataError(f"malformed scene entry: {exc!r}") from exc
    return canvas


def load_scene(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read scene {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"scene {path} is not valid JSON: {exc}") from exc
