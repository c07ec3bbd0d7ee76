"""Built-in 5x7 dot-matrix glyphs for mark labels.

Only digits and lowercase letters exist because mark texts are drawn
from the numeric and alphabetic id schemes. Rasterizing from a fixed
bitmap (integer nearest-neighbor scaling, no antialiasing) keeps
rendered output byte-identical across environments.
"""

from __future__ import annotations

from typing import Dict

import numpy as np

GLYPH_W = 5
GLYPH_H = 7
ADVANCE = 6  # glyph width plus one column of spacing

_RAW = {
    "0": ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    "1": ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    "2": ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    "3": ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    "4": ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    "5": ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    "6": ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    "7": ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    "8": ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    "9": ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
    "a": ["00000", "00000", "01110", "00001", "01111", "10001", "01111"],
    "b": ["10000", "10000", "11110", "10001", "10001", "10001", "11110"],
    "c": ["00000", "00000", "01110", "10000", "10000", "10001", "01110"],
    "d": ["00001", "00001", "01111", "10001", "10001", "10001", "01111"],
    "e": ["00000", "00000", "01110", "10001", "11111", "10000", "01110"],
    "f": ["00110", "01001", "01000", "11100", "01000", "01000", "01000"],
    "g": ["00000", "01111", "10001", "10001", "01111", "00001", "01110"],
    "h": ["10000", "10000", "11110", "10001", "10001", "10001", "10001"],
    "i": ["00100", "00000", "01100", "00100", "00100", "00100", "01110"],
    "j": ["00010", "00000", "00110", "00010", "00010", "10010", "01100"],
    "k": ["10000", "10000", "10010", "10100", "11000", "10100", "10010"],
    "l": ["01100", "00100", "00100", "00100", "00100", "00100", "01110"],
    "m": ["00000", "00000", "11010", "10101", "10101", "10001", "10001"],
    "n": ["00000", "00000", "11110", "10001", "10001", "10001", "10001"],
    "o": ["00000", "00000", "01110", "10001", "10001", "10001", "01110"],
    "p": ["00000", "00000", "11110", "10001", "11110", "10000", "10000"],
    "q": ["00000", "00000", "01111", "10001", "01111", "00001", "00001"],
    "r": ["00000", "00000", "10110", "11001", "10000", "10000", "10000"],
    "s": ["00000", "00000", "01111", "10000", "01110", "00001", "11110"],
    "t": ["01000", "01000", "11100", "01000", "01000", "01001", "00110"],
    "u": ["00000", "00000", "10001", "10001", "10001", "10011", "01101"],
    "v": ["00000", "00000", "10001", "10001", "10001", "01010", "00100"],
    "w": ["00000", "00000", "10001", "10001", "10101", "10101", "01010"],
    "x": ["00000", "00000", "10001", "01010", "00100", "01010", "10001"],
    "y": ["00000", "00000", "10001", "10001", "01111", "00001", "01110"],
    "z": ["00000", "00000", "11111", "00010", "00100", "01000", "11111"],
}

_FALLBACK = np.ones((GLYPH_H, GLYPH_W), dtype=bool)

GLYPHS: Dict[str, np.ndarray] = {
    ch: np.array([[bit == "1" for bit in row] for row in rows], dtype=bool)
    for ch, rows in _RAW.items()
}


def text_size(text: str, scale: int = 1) -> tuple:
    """(width, height) of the rendered text in pixels."""
    if not text:
        return (0, 0)
    w = len(text) * ADVANCE - 1
    return (w * scale, GLYPH_H * scale)


def render_text(text: str, scale: int = 1) -> np.ndarray:
    """Boolean pixel grid of the text, True where ink goes."""
    if scale < 1:
        raise ValueError("scale must be a positive integer")
    w, h = text_size(text, 1)
    grid = np.zeros((max(h, GLYPH_H), max(w, 1)), dtype=bool)
    for i, ch in enumerate(text):
        glyph = GLYPHS.get(ch, _FALLBACK)
        x0 = i * ADVANCE
        grid[0:GLYPH_H, x0 : x0 + GLYPH_W] = glyph
    if scale > 1:
        grid = np.repeat(np.repeat(grid, scale, axis=0), scale, axis=1)
    return grid
