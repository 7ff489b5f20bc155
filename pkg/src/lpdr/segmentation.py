"""Plate refinement and character segmentation.

The plate crop is deskewed, binarised with the text as foreground, cut down
to the character band with zero-one-alternation (ZOA) counts, stripped of
left/right border lines, and finally split at the valleys of its column
pixel vector ("vertical projection").
"""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import NoCharacterBand, ParameterError, SegmentationFailed
from .imaging import binarize_otsu, check_image, column_pixel_vector, text_foreground

CHAR_SIZE = 32


@dataclass(frozen=True)
class CharBox:
    left: int    # inclusive columns in the trimmed plate
    right: int
    image: np.ndarray

    @property
    def width(self) -> int:
        return self.right - self.left + 1


@dataclass(frozen=True)
class SegmentationConfig:
    alpha: int = 6
    beta: int = 8
    valley_ratio: float = 0.1
    min_span: int = 2
    char_size: int = CHAR_SIZE
    min_chars: int = 4
    max_chars: int = 8
    max_skew: float = 20.0
    deskew: bool = True


def _text_pixels(binary, min_share: float = 0.05) -> np.ndarray:
    """Foreground with edge-touching components and specks removed.

    Border lines and background leaking in at the crop corners touch the
    crop edge; the characters sit inside the plate margin and do not.
    """
    n, labels, stats, _ = cv2.connectedComponentsWithStats(binary, connectivity=8)
    if n <= 1:
        return np.zeros_like(binary)
    h, w = binary.shape
    x, y, bw, bh, area = stats[:, 0], stats[:, 1], stats[:, 2], stats[:, 3], stats[:, 4]
    inner = (x > 0) & (y > 0) & (x + bw < w) & (y + bh < h)
    inner[0] = False
    if not inner.any():
        return np.zeros_like(binary)
    keep = inner & (area >= min_share * area[inner].max())
    return np.where(keep[labels], 255, 0).astype(np.uint8)


def estimate_skew(crop) -> float:
    """Angle (degrees, image coordinates, in (-45, 45]) of the text's minimum-area rectangle.

    Only foreground components clear of the crop edge take part.  Returns
    0.0 when there is too little such foreground to fit a rectangle.
    """
    binary = _text_pixels(text_foreground(binarize_otsu(check_image(crop))))
    ys, xs = np.nonzero(binary)
    if len(xs) < 3:
        return 0.0
    pts = np.column_stack((xs, ys)).astype(np.float64)
    try:
        hull = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        return 0.0
    edges = np.roll(hull, -1, axis=0) - hull
    thetas = np.arctan2(edges[:, 1], edges[:, 0])
    c, s = np.cos(thetas), np.sin(thetas)
    # hull coordinates in each edge-aligned frame
    u = hull[:, 0][None, :] * c[:, None] + hull[:, 1][None, :] * s[:, None]
    v = -hull[:, 0][None, :] * s[:, None] + hull[:, 1][None, :] * c[:, None]
    areas = np.ptp(u, axis=1) * np.ptp(v, axis=1)
    # near-ties between equivalent edges resolve toward the smallest tilt
    best = np.flatnonzero(areas <= areas.min() * (1 + 1e-9))
    angles = (np.degrees(thetas[best]) + 45.0) % 90.0 - 45.0
    angles = np.where(angles == -45.0, 45.0, angles)
    return float(angles[np.argmin(np.abs(angles))])


def rotate(img, angle: float) -> np.ndarray:
    """Rotate about the centre by ``angle`` degrees (counter-clockwise on screen), bilinear."""
    h, w = img.shape
    m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), angle, 1.0)
    return cv2.warpAffine(img, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)


def deskew(crop, max_angle: float = 20.0) -> np.ndarray:
    """Level the dominant text line; estimates beyond ``max_angle`` are treated as failures."""
    crop = check_image(crop)
    angle = estimate_skew(crop)
    if angle == 0.0 or abs(angle) > max_angle:
        return crop
    return rotate(crop, angle)


def zoa_counts(binary, axis: int = 1) -> np.ndarray:
    """0/1 alternations along each row (axis=1) or each column (axis=0)."""
    b = check_image(binary) > 0
    if axis == 1:
        return np.count_nonzero(b[:, 1:] != b[:, :-1], axis=1)
    return np.count_nonzero(b[1:, :] != b[:-1, :], axis=0)


def zoa_row_counts(binary) -> np.ndarray:
    return zoa_counts(binary, axis=1)


def _runs(mask) -> list[tuple[int, int]]:
    """Inclusive (start, end) of every run of True."""
    m = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    d = np.diff(m.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def character_band(counts, alpha: int = 6, beta: int = 8) -> tuple[int, int]:
    """Longest run of rows with more than ``alpha`` ZOAs, at least ``beta`` rows long.

    Equal-length runs are separated by their total ZOA count, then by position.
    """
    if alpha < 1 or beta < 1:
        raise ParameterError("alpha and beta must be >= 1")
    counts = np.asarray(counts)
    runs = [(s, e) for s, e in _runs(counts > alpha) if e - s + 1 >= beta]
    if not runs:
        raise NoCharacterBand(f"no run of >= {beta} rows with more than {alpha} alternations")
    return max(runs, key=lambda r: (r[1] - r[0], int(counts[r[0]:r[1] + 1].sum()), -r[0]))


def trim_vertical_borders(binary, alpha: int = 6, beta: int = 8):
    """Restrict ``binary`` to its character band; returns (band image, (top_row, bottom_row))."""
    binary = check_image(binary)
    top, bottom = character_band(zoa_row_counts(binary), alpha, beta)
    return binary[top:bottom + 1], (top, bottom)


def _border_columns(zoa, vec, height: int, edge_slack: int = 3, max_width: float = 0.3) -> int:
    """How many leading columns are blank margin or a border line.

    A solid run (no alternations, or taller than 90% of the band) counts as
    border only when it starts within ``edge_slack`` columns of the image
    edge, so the stem of a leading "1" or "I" further in survives.  A short
    broken run hugging the edge (at most ``max_width`` x height wide and
    followed by a gap) is a tilted or partly binarised border as well.
    """
    n = len(vec)
    blank = vec == 0
    solid = (zoa == 0) & ~blank | (vec > 0.9 * height)
    i = 0
    while i < n and blank[i]:
        i += 1
    if i >= n or i > edge_slack:
        return i
    j = i
    while j < n and not blank[j]:
        j += 1
    if solid[i] or (j - i <= max(2, max_width * height) and j < n):
        if solid[i]:
            while i < n and solid[i]:
                i += 1
        else:
            i = j
        while i < n and blank[i]:
            i += 1
    return i


def trim_horizontal_borders(binary) -> np.ndarray:
    """Strip blank margins and edge-attached solid border lines from both sides."""
    binary = check_image(binary)
    h = binary.shape[0]
    zoa = zoa_counts(binary, axis=0)
    vec = column_pixel_vector(binary)
    left = _border_columns(zoa, vec, h)
    if left >= len(vec):
        raise NoCharacterBand("no character columns left after trimming")
    right = len(vec) - _border_columns(zoa[::-1], vec[::-1], h)
    return binary[:, left:right]


def normalize_char(glyph, size: int = CHAR_SIZE) -> np.ndarray:
    """Tight-crop the ink, scale the long side to ``size`` and centre on a zero canvas."""
    ys, xs = np.nonzero(glyph)
    canvas = np.zeros((size, size), dtype=np.uint8)
    if len(ys) == 0:
        return canvas
    ink = glyph[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    h, w = ink.shape
    scale = size / max(h, w)
    nh, nw = max(1, min(size, round(h * scale))), max(1, min(size, round(w * scale)))
    interp = cv2.INTER_AREA if scale < 1 else cv2.INTER_LINEAR
    small = cv2.resize(ink, (nw, nh), interpolation=interp)
    y0, x0 = (size - nh) // 2, (size - nw) // 2
    canvas[y0:y0 + nh, x0:x0 + nw] = np.where(small >= 128, 255, 0)
    return canvas


def segment_characters(binary, min_chars: int = 1, valley_ratio: float = 0.1,
                       min_span: int = 2, size: int = CHAR_SIZE) -> list[CharBox]:
    """Cut a trimmed plate at pixel-vector valleys no higher than ``valley_ratio`` of the maximum."""
    binary = check_image(binary)
    vec = column_pixel_vector(binary)
    top = vec.max()
    boxes = []
    if top > 0:
        for s, e in _runs(vec > valley_ratio * top):
            if e - s + 1 < min_span:
                continue
            glyph = binary[:, s:e + 1]
            if not glyph.any():
                continue
            boxes.append(CharBox(s, e, normalize_char(glyph, size)))
    if len(boxes) < min_chars:
        raise SegmentationFailed(f"found {len(boxes)} characters, need {min_chars}")
    return boxes


@dataclass
class PlateSegmentation:
    """Intermediate products kept for debugging dumps."""

    binary: np.ndarray
    zoa: np.ndarray
    band: tuple[int, int]
    trimmed: np.ndarray
    pixel_vector: np.ndarray
    chars: list[CharBox]


def segment_plate(crop, cfg: SegmentationConfig = SegmentationConfig()) -> PlateSegmentation:
    """Deskew, binarise, trim and segment a grayscale plate crop."""
    crop = check_image(crop)
    if cfg.deskew:
        crop = deskew(crop, cfg.max_skew)
    binary = text_foreground(binarize_otsu(crop))
    zoa = zoa_row_counts(binary)
    top, bottom = character_band(zoa, cfg.alpha, cfg.beta)
    trimmed = trim_horizontal_borders(binary[top:bottom + 1])
    chars = segment_characters(trimmed, cfg.min_chars, cfg.valley_ratio, cfg.min_span,
                               cfg.char_size)
    if len(chars) > cfg.max_chars:
        raise SegmentationFailed(f"found {len(chars)} characters, at most {cfg.max_chars} allowed")
    return PlateSegmentation(binary, zoa, (top, bottom), trimmed,
                             column_pixel_vector(trimmed), chars)
