"""Page raster with evenly spaced five-line staves."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

from PIL import Image, ImageDraw

from ..errors import ConfigError, LayoutError

# page sizes in inches (width, height), portrait
PAGE_SIZES = {"A4": (210 / 25.4, 297 / 25.4), "Letter": (8.5, 11.0)}
WHITE = (255, 255, 255, 255)


@dataclass(frozen=True)
class Margins:
    left: int
    right: int
    top: int
    bottom: int


MarginFn = Callable[[int, int, int], Margins]


def uniform_margins(page_index: int, width: int, height: int) -> Margins:
    m = round(0.06 * width)
    return Margins(m, m, m, m)


def odd_page_margins(extra: float = 0.5) -> MarginFn:
    """Margins that are ``1 + extra`` times wider on odd page numbers (1-based)."""

    def margins(page_index: int, width: int, height: int) -> Margins:
        base = uniform_margins(page_index, width, height)
        if page_index % 2 == 0:
            return base
        k = 1.0 + extra
        return Margins(round(base.left * k), round(base.right * k), round(base.top * k), round(base.bottom * k))

    return margins


@dataclass
class Staff:
    left: int
    right: int
    lines: tuple[int, ...]  # y of the 5 lines, top to bottom

    @property
    def space(self) -> int:
        return self.lines[1] - self.lines[0]

    @property
    def bottom(self) -> int:
        return self.lines[-1]


@dataclass
class ScoreCanvas:
    image: Image.Image
    page: str
    orientation: str
    dpi: int
    margins: Margins
    staves: list[Staff]
    indentation: bool
    header_bottom: int
    placed: dict = field(default_factory=dict)
    clefs: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.image.width

    @property
    def height(self) -> int:
        return self.image.height

    @property
    def staff_line_coords(self) -> list[tuple[int, ...]]:
        return [s.lines for s in self.staves]

    @property
    def staff_space(self) -> int:
        return self.staves[0].space


def page_pixels(page: str, orientation: str, dpi: int) -> tuple[int, int]:
    if page not in PAGE_SIZES:
        raise ConfigError(f"unknown page size {page!r}; expected one of {sorted(PAGE_SIZES)}")
    if orientation not in ("portrait", "landscape"):
        raise ConfigError(f"orientation must be 'portrait' or 'landscape', got {orientation!r}")
    if dpi < 20:
        raise ConfigError(f"dpi must be >= 20, got {dpi}")
    w, h = (round(v * dpi) for v in PAGE_SIZES[page])
    return (h, w) if orientation == "landscape" else (w, h)


def create_canvas(page: str = "A4", orientation: str = "portrait", systems: int = 9,
                  indentation: bool = True, dpi: int = 100, page_index: int = 1,
                  margin_fn: MarginFn = uniform_margins) -> ScoreCanvas:
    """White page with ``systems`` staves spread evenly below a header band.

    Staff spaces are an even number of pixels so every half-space position
    lands on a whole pixel row. Each system gets room for three ledger lines
    above and below; if that does not fit a :class:`LayoutError` is raised.
    With ``indentation`` the first staff starts further right, leaving room
    for an instrument name.
    """
    if systems < 1:
        raise ConfigError(f"need at least one system, got {systems}")
    width, height = page_pixels(page, orientation, dpi)
    margins = margin_fn(page_index, width, height)
    space = 2 * max(2, round(dpi * 0.04))
    header_bottom = margins.top + round(0.1 * height)
    available = height - header_bottom - margins.bottom
    pitch = available // systems
    if pitch < 10 * space:
        raise LayoutError(
            f"{systems} systems need {10 * space * systems} px but only {available} px fit on the page")
    indent = round(0.15 * width) if indentation else 0
    staves = []
    for i in range(systems):
        top = header_bottom + i * pitch + (pitch - 4 * space) // 2
        left = margins.left + (indent if i == 0 else 0)
        staves.append(Staff(left, width - margins.right, tuple(top + k * space for k in range(5))))
    image = Image.new("RGBA", (width, height), WHITE)
    canvas = ScoreCanvas(image, page, orientation, dpi, margins, staves, indentation, header_bottom)
    _draw_staves(canvas)
    return canvas


def blank_canvas(page: str = "A4", orientation: str = "portrait", dpi: int = 100) -> ScoreCanvas:
    """An all-white page without staves."""
    width, height = page_pixels(page, orientation, dpi)
    margins = uniform_margins(1, width, height)
    image = Image.new("RGBA", (width, height), WHITE)
    return ScoreCanvas(image, page, orientation, dpi, margins, [], False, margins.top)


def _draw_staves(canvas: ScoreCanvas) -> None:
    draw = ImageDraw.Draw(canvas.image)
    for staff in canvas.staves:
        for y in staff.lines:
            draw.line([(staff.left, y), (staff.right, y)], fill=(0, 0, 0, 255), width=1)


def render_png(canvas: ScoreCanvas) -> bytes:
    out = io.BytesIO()
    try:
        canvas.image.save(out, format="PNG", compress_level=6)
    except OSError as exc:
        raise LayoutError(f"PNG encoding failed: {exc}") from exc
    return out.getvalue()
