"""Glyph rasterisation from OpenCV's built-in Hershey vector fonts."""
from __future__ import annotations

from functools import lru_cache

import cv2
import numpy as np

ALPHABET = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"

# (cv2 font face, stroke-weight multiplier); plate sets are heavy, document sets light
PLATE_FONTS = (
    (cv2.FONT_HERSHEY_SIMPLEX, 1.0),
    (cv2.FONT_HERSHEY_DUPLEX, 1.0),
    (cv2.FONT_HERSHEY_TRIPLEX, 0.9),
)
DOCUMENT_FONTS = (
    (cv2.FONT_HERSHEY_SIMPLEX, 0.5),
    (cv2.FONT_HERSHEY_COMPLEX, 0.45),
    (cv2.FONT_HERSHEY_TRIPLEX, 0.5),
    (cv2.FONT_HERSHEY_PLAIN, 0.6),
    (cv2.FONT_HERSHEY_SIMPLEX | cv2.FONT_ITALIC, 0.5),
    (cv2.FONT_HERSHEY_COMPLEX | cv2.FONT_ITALIC, 0.45),
    (cv2.FONT_HERSHEY_DUPLEX, 0.7),
    (cv2.FONT_HERSHEY_SIMPLEX, 0.9),
)


@lru_cache(maxsize=4096)
def glyph(ch: str, face: int, height: int, thickness: int) -> np.ndarray:
    """Anti-aliased ink mask (uint8, tightly cropped) of ``ch`` with cap height ``height``."""
    base_h = cv2.getTextSize("H", face, 1.0, 1)[0][1]
    scale = height / base_h
    (w, h), baseline = cv2.getTextSize(ch, face, scale, thickness)
    pad = 2 * thickness + 4
    canvas = np.zeros((h + baseline + 2 * pad, w + 2 * pad), dtype=np.uint8)
    cv2.putText(canvas, ch, (pad, pad + h), face, scale, 255, thickness, cv2.LINE_AA)
    ys, xs = np.nonzero(canvas)
    out = canvas[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    out.setflags(write=False)
    return out


def stroke_thickness(height: int, weight: float) -> int:
    return max(1, round(height * weight / 7.0))


@lru_cache(maxsize=256)
def cell_width(face: int, height: int, thickness: int) -> int:
    """Widest glyph of the alphabet, used as the monospace cell width."""
    return max(glyph(c, face, height, thickness).shape[1] for c in ALPHABET)
