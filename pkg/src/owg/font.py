"""Fixed 5x7 bitmap font for marker labels (digits only, plus a few symbols)."""

import numpy as np

GLYPH_W = 5
GLYPH_H = 7

_ROWS = {
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
    "-": ["00000", "00000", "00000", "11111", "00000", "00000", "00000"],
    " ": ["00000"] * 7,
}

GLYPHS = {
    ch: np.array([[c == "1" for c in row] for row in rows], dtype=bool)
    for ch, rows in _ROWS.items()
}


def scale_for(label_px):
    return max(1, int(label_px) // GLYPH_H)


def text_size(text, scale):
    """(width, height) in pixels of ``text`` rendered at integer ``scale``."""
    n = len(text)
    return (n * GLYPH_W + max(0, n - 1)) * scale, GLYPH_H * scale


def render_text(text, scale):
    """Boolean ink raster for ``text``."""
    w, h = text_size(text, scale)
    out = np.zeros((h, w), dtype=bool)
    x = 0
    for ch in text:
        g = GLYPHS[ch]
        g = np.repeat(np.repeat(g, scale, axis=0), scale, axis=1)
        out[:, x : x + g.shape[1]] = g
        x += (GLYPH_W + 1) * scale
    return out
