"""Candidate plate detection.

Edges are traced into contours, every contour is replaced by the axis-aligned
rectangle through its four extreme points (which repairs broken and tilted
plate outlines), implausible rectangles are dropped on shape, and the
survivors are screened by counting peaks in the column pixel vector of their
binarised crop.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import cv2
import numpy as np
from numba import njit

from .errors import DegenerateCandidate, ParameterError
from .imaging import (binarize_otsu, check_image, column_pixel_vector,
                      detect_edges, text_foreground)

Point = tuple[int, int]


@dataclass(frozen=True)
class Rect:
    """Inclusive pixel bounds; a rect covers columns left..right and rows top..bottom."""

    left: int
    top: int
    right: int
    bottom: int

    def __post_init__(self):
        if self.left > self.right or self.top > self.bottom:
            raise ParameterError(f"inverted rect {self}")

    @property
    def width(self) -> int:
        return self.right - self.left + 1

    @property
    def height(self) -> int:
        return self.bottom - self.top + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def aspect(self) -> float:
        return self.width / self.height

    def contains(self, x, y) -> bool:
        return self.left <= x <= self.right and self.top <= y <= self.bottom

    def encloses(self, other: "Rect", tol: int = 0) -> bool:
        return (self.left <= other.left + tol and self.top <= other.top + tol
                and self.right >= other.right - tol and self.bottom >= other.bottom - tol)

    def crop(self, img: np.ndarray) -> np.ndarray:
        return img[self.top:self.bottom + 1, self.left:self.right + 1]

    def as_dict(self) -> dict:
        return {"left": self.left, "top": self.top, "right": self.right, "bottom": self.bottom}


def iou(a: Rect, b: Rect) -> float:
    """Intersection over union of the pixel sets covered by two rects."""
    iw = min(a.right, b.right) - max(a.left, b.left) + 1
    ih = min(a.bottom, b.bottom) - max(a.top, b.top) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class ExtremePoints:
    top: Point      # A: minimum y
    right: Point    # B: maximum x
    bottom: Point   # C: maximum y
    left: Point     # D: minimum x


@dataclass(frozen=True)
class GeometryConfig:
    min_aspect: float = 2.0
    max_aspect: float = 6.0
    min_area: float = 500.0
    max_area: float = 50000.0
    # area bounds are stated for this many pixels and scale with the image
    reference_pixels: int = 480 * 640
    dedup_iou: float = 0.7

    def __post_init__(self):
        if not 0 < self.min_aspect <= self.max_aspect:
            raise ParameterError("aspect range must satisfy 0 < min <= max")
        if not 0 <= self.min_area <= self.max_area:
            raise ParameterError("area range must satisfy 0 <= min <= max")
        if not 0 < self.dedup_iou <= 1:
            raise ParameterError("dedup_iou must lie in (0, 1]")

    def area_bounds(self, image_shape=None) -> tuple[float, float]:
        if image_shape is None:
            return self.min_area, self.max_area
        s = image_shape[0] * image_shape[1] / self.reference_pixels
        return self.min_area * s, self.max_area * s


@dataclass(frozen=True)
class PlateCandidate:
    rect: Rect
    crop: np.ndarray
    binary_crop: np.ndarray
    pixel_vector: np.ndarray
    peak_count: int

    @property
    def area(self) -> int:
        return self.rect.area


def extract_contours(edges) -> list[np.ndarray]:
    """Outer border of every 8-connected edge component, as ``(N, 2)`` (x, y) arrays.

    Hole borders are dropped; components whose border has fewer than three
    points cannot span a rectangle and are skipped.
    """
    edges = check_image(edges, "edge map")
    mask = np.where(edges > 0, 255, 0).astype(np.uint8)
    contours, hierarchy = cv2.findContours(mask, cv2.RETR_CCOMP, cv2.CHAIN_APPROX_NONE)
    if hierarchy is None:
        return []
    out = []
    for c, h in zip(contours, hierarchy[0]):
        if h[3] != -1 or len(c) < 3:
            continue
        out.append(c.reshape(-1, 2).astype(np.int64))
    return out


def extreme_points(contour) -> ExtremePoints:
    """Top-, right-, bottom- and left-most points; ties go to smaller x, then smaller y."""
    pts = np.asarray(contour).reshape(-1, 2)
    if len(pts) == 0:
        raise ParameterError("empty contour")
    x, y = pts[:, 0], pts[:, 1]
    y0, x1, y1, x0 = y.min(), x.max(), y.max(), x.min()
    return ExtremePoints(top=(int(x[y == y0].min()), int(y0)),
                         right=(int(x1), int(y[x == x1].min())),
                         bottom=(int(x[y == y1].min()), int(y1)),
                         left=(int(x0), int(y[x == x0].min())))


def reconstruct_rectangle(e: ExtremePoints) -> Rect:
    """Rectangle A'B'C'D' with corners (x_D, y_A), (x_B, y_A), (x_B, y_C), (x_D, y_C)."""
    left, top, right, bottom = e.left[0], e.top[1], e.right[0], e.bottom[1]
    if right <= left or bottom <= top:
        raise DegenerateCandidate(f"zero-extent candidate {(left, top, right, bottom)}")
    return Rect(left, top, right, bottom)


def geometric_prefilter(rects: Sequence[Rect], cfg: GeometryConfig = GeometryConfig(),
                        image_shape=None) -> list[Rect]:
    """Keep plate-shaped rects, then drop the smaller of any pair with IoU above ``cfg.dedup_iou``."""
    lo, hi = cfg.area_bounds(image_shape)
    ok = [r for r in rects
          if cfg.min_aspect <= r.aspect <= cfg.max_aspect and lo <= r.area <= hi]
    ok.sort(key=lambda r: (-r.area, r.top, r.left, r.bottom, r.right))
    kept: list[Rect] = []
    for r in ok:
        if all(iou(r, k) <= cfg.dedup_iou for k in kept):
            kept.append(r)
    return kept


@njit(cache=True)
def _prominence_kernel(vals):
    n = len(vals)
    idx = np.empty(n, dtype=np.int64)
    prom = np.empty(n)
    m = 0
    for k in range(1, n - 1):
        h = vals[k]
        if not (vals[k - 1] < h and vals[k + 1] < h):
            continue
        left = h
        i = k - 1
        while i >= 0 and vals[i] <= h:
            left = min(left, vals[i])
            i -= 1
        right = h
        i = k + 1
        while i < n and vals[i] <= h:
            right = min(right, vals[i])
            i += 1
        idx[m] = k
        prom[m] = h - max(left, right)
        m += 1
    return idx[:m], prom[:m]


def peak_prominences(v) -> list[tuple[int, float]]:
    """(index, prominence) of every local maximum of ``v``.

    A plateau counts once and is reported at its first index.  The prominence
    is the height above the higher of the two bracketing minima, each taken
    between the peak and the nearest strictly higher sample on that side (or
    the end of the vector).
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if len(v) < 3:
        return []
    # run-length encode so plateaus become single samples
    starts = np.concatenate(([0], np.flatnonzero(np.diff(v) != 0) + 1))
    idx, prom = _prominence_kernel(v[starts])
    return list(zip(starts[idx].tolist(), prom.tolist()))


def count_peaks(v, threshold: float = 3.0) -> int:
    """Number of local maxima whose prominence is at least ``threshold``."""
    if threshold <= 0:
        raise ParameterError("peak threshold must be positive")
    return sum(1 for _, p in peak_prominences(v) if p >= threshold)


def statistical_filter(cands: Sequence[PlateCandidate], peak_threshold: float = 3.0,
                       min_peaks: int = 6) -> list[PlateCandidate]:
    """Keep candidates with strictly more than ``min_peaks`` peaks, most peaks first."""
    scored = [replace(c, peak_count=count_peaks(c.pixel_vector, peak_threshold)) for c in cands]
    kept = [c for c in scored if c.peak_count > min_peaks]
    kept.sort(key=lambda c: -c.peak_count)
    return kept


def make_candidate(gray, rect: Rect, peak_threshold: float = 3.0) -> PlateCandidate:
    crop = rect.crop(gray)
    binary = text_foreground(binarize_otsu(crop))
    vec = column_pixel_vector(binary)
    return PlateCandidate(rect, crop, binary, vec, count_peaks(vec, peak_threshold))


@dataclass(frozen=True)
class DetectionConfig:
    canny_low: float = 50.0
    canny_high: float = 150.0
    geometry: GeometryConfig = GeometryConfig()
    peak_threshold: float = 3.0
    min_peaks: int = 6
    max_candidates: int = 3
    close_gaps: int = 1


def candidate_rects(gray, cfg: DetectionConfig = DetectionConfig()) -> list[Rect]:
    """Reconstructed, shape-filtered rectangles from the edge map of ``gray``."""
    gray = check_image(gray)
    edges = detect_edges(gray, cfg.canny_low, cfg.canny_high)
    if cfg.close_gaps > 0:
        k = 2 * cfg.close_gaps + 1
        edges = cv2.morphologyEx(edges, cv2.MORPH_CLOSE, np.ones((k, k), np.uint8))
    rects = []
    for c in extract_contours(edges):
        try:
            rects.append(reconstruct_rectangle(extreme_points(c)))
        except DegenerateCandidate:
            continue
    return geometric_prefilter(rects, cfg.geometry, gray.shape)


def detect_candidates(gray, cfg: DetectionConfig = DetectionConfig()) -> list[PlateCandidate]:
    """Phase-one detection: candidates passing the peak filter, best first."""
    gray = check_image(gray)
    cands = [make_candidate(gray, r, cfg.peak_threshold) for r in candidate_rects(gray, cfg)]
    kept = statistical_filter(cands, cfg.peak_threshold, cfg.min_peaks)
    return kept[:cfg.max_candidates]
