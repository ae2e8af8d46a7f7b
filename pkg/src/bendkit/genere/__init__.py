"""Procedural graphic scores: staves, noteheads, text and lines on a raster page,
plus Markov chains learned from MIDI to drive note choice."""

from .canvas import ScoreCanvas, blank_canvas, create_canvas, odd_page_margins, render_png, uniform_margins
from .markov import MarkovSampler, TransitionTable, learn_from_midi
from .notation import (
    PlacedNote,
    add_text,
    apply_treble_clef,
    draw_line_across_notes,
    place_notehead,
    placed_notes,
    staff_position,
)
from .scene import listing_scene, markov_scene, render_scene

__all__ = [
    "MarkovSampler", "PlacedNote", "ScoreCanvas", "TransitionTable", "add_text", "apply_treble_clef",
    "blank_canvas", "create_canvas", "draw_line_across_notes", "learn_from_midi", "listing_scene",
    "markov_scene", "odd_page_margins", "place_notehead", "placed_notes", "render_png", "render_scene",
    "staff_position", "uniform_margins",
]
