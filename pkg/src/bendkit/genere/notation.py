"""Noteheads, accidentals, clefs, text and lines drawn on a score canvas.

Glyphs are plain geometric shapes so the output depends on nothing but
Pillow's rasterizer. Text uses Pillow's built-in bitmap font, enlarged by
whole-pixel nearest-neighbour scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageColor, ImageDraw, ImageFont

from ..errors import ConfigError, LayoutError
from .canvas import ScoreCanvas, Staff

BLACK = (0, 0, 0, 255)
NOTEHEAD_TYPES = ("normal", "x", "diamond", "square", "triangle")
ACCIDENTALS = ("sharp", "flat", "none")
CLEFS = ("treble",)

# natural pitch class -> letter index (C=0 ... B=6)
_LETTER = {0: 0, 2: 1, 4: 2, 5: 3, 7: 4, 9: 5, 11: 6}
# diatonic step of the bottom treble line, E4
TREBLE_BOTTOM_STEP = 37


def spelled(pitch: int, accidental: str = "sharp") -> tuple[int, str]:
    """Diatonic step (7 per octave, C-1 = 0) and the accidental actually needed.

    White keys are always natural. A black key is spelled from the natural
    below when sharp and from the natural above when flat.
    """
    if not 0 <= pitch <= 127:
        raise ConfigError(f"MIDI pitch must be in 0..127, got {pitch}")
    if accidental not in ACCIDENTALS:
        raise ConfigError(f"accidental must be one of {ACCIDENTALS}, got {accidental!r}")
    pc = pitch % 12
    if pc in _LETTER:
        return 7 * (pitch // 12) + _LETTER[pc], "none"
    if accidental == "flat":
        base = pitch + 1
    else:
        base, accidental = pitch - 1, "sharp"
    return 7 * (base // 12) + _LETTER[base % 12], accidental


def staff_position(pitch: int, accidental: str = "sharp", clef: str = "treble") -> int:
    """Half-space steps above the bottom staff line (0 bottom line, 8 top line)."""
    if clef not in CLEFS:
        raise ConfigError(f"unsupported clef {clef!r}")
    return spelled(pitch, accidental)[0] - TREBLE_BOTTOM_STEP


def ledger_positions(position: int) -> list[int]:
    """Staff positions of the ledger lines a note at ``position`` needs."""
    if position <= -2:
        return list(range(-2, position - 1, -2))
    if position >= 10:
        return list(range(10, position + 1, 2))
    return []


@dataclass(frozen=True)
class PlacedNote:
    index: int
    system: int
    hpos: float
    pitch: int
    accidental: str
    notehead_type: str
    x: int
    y: int


def _note_area(canvas: ScoreCanvas, staff: Staff) -> tuple[int, int]:
    """Horizontal pixel range for note placement: after the clef, before the end."""
    s = staff.space
    return staff.left + 4 * s, staff.right - s


def anchor(canvas: ScoreCanvas, system: int, hpos: float, pitch: int, accidental: str = "sharp") -> tuple[int, int]:
    staff = canvas.staves[system]
    lo, hi = _note_area(canvas, staff)
    x = lo + int(round(hpos * (hi - lo)))
    y = staff.bottom - staff_position(pitch, accidental) * staff.space // 2
    return x, y


def _check_system(canvas: ScoreCanvas, system: int) -> Staff:
    if not 0 <= system < len(canvas.staves):
        raise LayoutError(f"system {system} does not exist (canvas has {len(canvas.staves)})")
    return canvas.staves[system]


def _draw_head(draw: ImageDraw.ImageDraw, x: int, y: int, s: int, kind: str) -> None:
    rx, ry = round(0.65 * s), s // 2
    if kind == "normal":
        draw.ellipse([x - rx, y - ry, x + rx, y + ry], fill=BLACK)
    elif kind == "x":
        draw.line([(x - rx, y - ry), (x + rx, y + ry)], fill=BLACK, width=2)
        draw.line([(x - rx, y + ry), (x + rx, y - ry)], fill=BLACK, width=2)
    elif kind == "diamond":
        draw.polygon([(x - rx, y), (x, y - ry), (x + rx, y), (x, y + ry)], fill=BLACK)
    elif kind == "square":
        draw.rectangle([x - ry, y - ry, x + ry, y + ry], fill=BLACK)
    elif kind == "triangle":
        draw.polygon([(x - rx, y + ry), (x, y - ry), (x + rx, y + ry)], fill=BLACK)
    else:
        raise ConfigError(f"notehead_type must be one of {NOTEHEAD_TYPES}, got {kind!r}")


def _draw_accidental(draw: ImageDraw.ImageDraw, x: int, y: int, s: int, accidental: str) -> None:
    cx = x - 2 * s
    if accidental == "sharp":
        for dx in (-s // 4, s // 4):
            draw.line([(cx + dx, y - s), (cx + dx, y + s)], fill=BLACK, width=1)
        for dy in (-s // 4, s // 4):
            draw.line([(cx - s // 2, y + dy + s // 8), (cx + s // 2, y + dy - s // 8)], fill=BLACK, width=2)
    elif accidental == "flat":
        draw.line([(cx - s // 4, y - 3 * s // 2), (cx - s // 4, y + s // 2)], fill=BLACK, width=1)
        draw.arc([cx - s // 4 - s // 2, y - s // 4, cx + s // 2, y + s // 2], 270, 90, fill=BLACK, width=1)


def place_notehead(canvas: ScoreCanvas, system: int, hpos: float, pitch: int,
                   accidental: str = "sharp", notehead_type: str = "normal") -> PlacedNote:
    """Draw a notehead (with ledger lines and accidental) and register it."""
    staff = _check_system(canvas, system)
    if not 0.0 <= hpos <= 1.0:
        raise LayoutError(f"horizontal position must be in [0, 1], got {hpos}")
    if notehead_type not in NOTEHEAD_TYPES:
        raise ConfigError(f"notehead_type must be one of {NOTEHEAD_TYPES}, got {notehead_type!r}")
    _, shown = spelled(pitch, accidental)
    x, y = anchor(canvas, system, hpos, pitch, accidental)
    s = staff.space
    draw = ImageDraw.Draw(canvas.image)
    for pos in ledger_positions(staff_position(pitch, accidental)):
        ly = staff.bottom - pos * s // 2
        draw.line([(x - round(1.2 * s), ly), (x + round(1.2 * s), ly)], fill=BLACK, width=1)
    _draw_head(draw, x, y, s, notehead_type)
    _draw_accidental(draw, x, y, s, shown)
    note = PlacedNote(len(canvas.placed), system, float(hpos), int(pitch), shown, notehead_type, x, y)
    canvas.placed[note.index] = note
    return note


def placed_notes(canvas: ScoreCanvas) -> tuple[dict[int, PlacedNote], int]:
    return dict(canvas.placed), len(canvas.placed)


def apply_treble_clef(canvas: ScoreCanvas, system: int = 0, on_all: bool = False) -> ScoreCanvas:
    """Stylized G clef: a spiral around the G line crossed by a vertical stroke."""
    targets = range(len(canvas.staves)) if on_all else [system]
    draw = ImageDraw.Draw(canvas.image)
    for i in targets:
        staff = _check_system(canvas, i)
        s = staff.space
        cx, gy = staff.left + 2 * s, staff.lines[3]
        t = np.linspace(0.0, 2.6 * math.pi, 60)
        r = 0.25 * s + 0.45 * s * t / math.pi
        spiral = [(cx + float(rr * math.cos(tt)), gy + float(rr * math.sin(tt))) for rr, tt in zip(r, t)]
        draw.line(spiral, fill=BLACK, width=2)
        top, bottom = staff.lines[0] - s, staff.bottom + s
        draw.line([(cx + s // 2, top), (cx, bottom)], fill=BLACK, width=2)
        draw.ellipse([cx - s // 2, bottom - s // 4, cx, bottom + s // 4], fill=BLACK)
        canvas.clefs[i] = "treble"
    return canvas


# text

_FONT = ImageFont.load_default_imagefont()
TEXT_SCALE = {"title": 3, "composer": 2, "instrument": 1}


def _text_mask(text: str, scale: int) -> Image.Image:
    left, top, right, bottom = _FONT.getbbox(text)
    mask = Image.new("L", (right - left, bottom - top), 0)
    ImageDraw.Draw(mask).text((-left, -top), text, font=_FONT, fill=255)
    # trim to the inked pixels so alignment is by what is visible
    mask = mask.crop(mask.getbbox())
    return mask.resize((mask.width * scale, mask.height * scale), Image.NEAREST)


def add_text(canvas: ScoreCanvas, kind: str, text: str, align: float = 4.75) -> tuple[int, int, int, int]:
    """Draw a title, composer or instrument label; returns its pixel box.

    The title is centred at the top. The composer line sits under it with
    its left edge at ``width * (1 - 1/align)``, pulled back inside the right
    margin when needed. The instrument name is right-aligned just left of
    the first staff, centred on it vertically.
    """
    if not text or not text.strip():
        raise ConfigError("text must be non-empty")
    if kind not in TEXT_SCALE:
        raise ConfigError(f"text kind must be one of {sorted(TEXT_SCALE)}, got {kind!r}")
    mask = _text_mask(text, max(1, round(TEXT_SCALE[kind] * canvas.dpi / 100)))
    w, h = mask.size
    m = canvas.margins
    if kind == "title":
        x, y = (canvas.width - w) // 2, m.top
    elif kind == "composer":
        if align <= 1:
            raise ConfigError(f"align value must be > 1, got {align}")
        x = min(round(canvas.width * (1 - 1 / align)), canvas.width - m.right - w)
        y = m.top + round(0.05 * canvas.height)
    else:
        staff = canvas.staves[0]
        x = max(0, staff.left - staff.space - w)
        y = staff.lines[2] - h // 2
    canvas.image.paste(Image.new("RGBA", mask.size, BLACK), (x, y), mask)
    return x, y, x + w - 1, y + h - 1


def draw_line_across_notes(canvas: ScoreCanvas, notes: list[PlacedNote], color="blue",
                           line_width: int = 1) -> ScoreCanvas:
    if len(notes) < 2:
        raise LayoutError(f"a line needs at least 2 notes, got {len(notes)}")
    try:
        fill = ImageColor.getrgb(color) if isinstance(color, str) else tuple(color)
    except ValueError as exc:
        raise ConfigError(f"unknown colour {color!r}") from exc
    ImageDraw.Draw(canvas.image).line([(n.x, n.y) for n in notes], fill=fill, width=line_width)
    return canvas
