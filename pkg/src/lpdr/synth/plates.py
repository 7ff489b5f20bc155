"""Synthetic licence-plate rendering with exact ground truth."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import cv2
import numpy as np

from ..errors import SpecError
from .fonts import ALPHABET, PLATE_FONTS, cell_width, glyph, stroke_thickness

BORDER_STYLES = ("none", "thin", "thick", "fake")
BASE_CHAR_HEIGHT = 28


@dataclass(frozen=True)
class PlateSpec:
    text: str
    font: int = 0
    rotation: float = 0.0          # degrees, counter-clockwise on screen
    border: str = "thin"
    fake_border_frac: float = 0.15  # share of plate height per fake band
    noise: float = 0.0             # Gaussian sigma in intensity units
    illumination: float = 1.0
    blur: float = 0.0              # Gaussian sigma in pixels
    scale: float = 1.0
    background: int = 225
    ink: int = 35

    def __post_init__(self):
        if not 4 <= len(self.text) <= 8:
            raise SpecError(f"plate text must have 4-8 characters, got {self.text!r}")
        bad = [c for c in self.text if c not in ALPHABET]
        if bad:
            raise SpecError(f"unsupported glyphs {bad!r}")
        if not 0 <= self.font < len(PLATE_FONTS):
            raise SpecError(f"font id {self.font} out of range")
        if self.border not in BORDER_STYLES:
            raise SpecError(f"unknown border style {self.border!r}")
        if not 0 <= self.fake_border_frac <= 0.2:
            raise SpecError("fake_border_frac must lie in [0, 0.2]")
        if abs(self.rotation) > 20 or not 0.5 <= self.illumination <= 1.5:
            raise SpecError("rotation or illumination out of range")
        if self.noise < 0 or self.blur < 0 or not 0.3 <= self.scale <= 4:
            raise SpecError("noise, blur or scale out of range")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PlateTruth:
    text: str
    char_spans: tuple[tuple[int, int], ...]   # inclusive columns, before rotation
    glyph_rows: tuple[int, int]               # inclusive rows covering all glyph ink
    size: tuple[int, int]                      # (height, width) of the unrotated plate


@dataclass
class PlateLayers:
    """Unrotated plate: intensity in [0, 1] ink coverage plus an opacity mask."""

    ink: np.ndarray
    mask: np.ndarray
    truth: PlateTruth = field(repr=False)


def layout_plate(spec: PlateSpec) -> PlateLayers:
    face, weight = PLATE_FONTS[spec.font]
    ch = max(8, round(BASE_CHAR_HEIGHT * spec.scale))
    th = stroke_thickness(ch, weight)
    cell = cell_width(face, ch, th)
    gap = max(2, round(0.22 * ch))
    margin_x = max(4, round(0.45 * ch))
    margin_y = max(3, round(0.3 * ch))
    line = {"none": 0, "thin": max(1, round(ch / 14)), "thick": max(2, round(ch / 6)),
            "fake": max(1, round(ch / 14))}[spec.border]

    inner_h = ch + 2 * margin_y
    band = 0
    if spec.border == "fake":
        # bands take fake_border_frac of the final plate height each
        f = spec.fake_border_frac
        band = int(round(f * (inner_h + 2 * line) / (1 - 2 * f))) if f > 0 else 0
    height = inner_h + 2 * line + 2 * band
    width = 2 * line + 2 * margin_x + len(spec.text) * cell + (len(spec.text) - 1) * gap

    ink = np.zeros((height, width), dtype=np.float64)
    y0 = line + band + margin_y
    spans = []
    tops, bottoms = [], []
    for i, c in enumerate(spec.text):
        g = glyph(c, face, ch, th).astype(np.float64) / 255.0
        gh, gw = g.shape
        x0 = line + margin_x + i * (cell + gap) + (cell - gw) // 2
        # glyphs sit on a common baseline; descenders (Q) hang below
        gy = y0 + max(0, ch - gh) if gh <= ch else y0
        ink[gy:gy + gh, x0:x0 + gw] = np.maximum(ink[gy:gy + gh, x0:x0 + gw], g)
        cols = np.flatnonzero(g.max(axis=0) >= 0.5)
        rows = np.flatnonzero(g.max(axis=1) >= 0.5)
        spans.append((x0 + int(cols[0]), x0 + int(cols[-1])))
        tops.append(gy + int(rows[0]))
        bottoms.append(gy + int(rows[-1]))
    if line:
        ink[:line, :] = ink[-line:, :] = 1.0
        ink[:, :line] = ink[:, -line:] = 1.0
    if band:
        ink[line:line + band, :] = 1.0
        ink[height - line - band:height - line, :] = 1.0
    truth = PlateTruth(spec.text, tuple(spans), (min(tops), max(bottoms)), (height, width))
    return PlateLayers(ink, np.ones_like(ink), truth)


def rotate_layers(layers: PlateLayers, angle: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotate ink and mask about the plate centre, expanding the canvas to fit."""
    ink, mask = layers.ink, layers.mask
    if angle == 0:
        return ink, mask
    h, w = ink.shape
    m = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, 1.0)
    cos, sin = abs(m[0, 0]), abs(m[0, 1])
    nw, nh = int(np.ceil(w * cos + h * sin)), int(np.ceil(w * sin + h * cos))
    m[0, 2] += nw / 2.0 - w / 2.0
    m[1, 2] += nh / 2.0 - h / 2.0
    warp = dict(dsize=(nw, nh), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return cv2.warpAffine(ink, m, **warp), cv2.warpAffine(mask, m, **warp)


def shade(ink: np.ndarray, spec: PlateSpec) -> np.ndarray:
    """Plate intensities (float) before photometric degradation."""
    return spec.background + (spec.ink - spec.background) * ink


def degrade(img: np.ndarray, spec: PlateSpec, rng: np.random.Generator) -> np.ndarray:
    """Blur, illumination and sensor noise, returned as uint8."""
    out = img.astype(np.float64)
    if spec.blur > 0:
        out = cv2.GaussianBlur(out, (0, 0), spec.blur)
    out = out * spec.illumination
    if spec.noise > 0:
        out = out + rng.normal(0.0, spec.noise, out.shape)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def render_plate(spec: PlateSpec, seed: int = 0) -> tuple[np.ndarray, PlateTruth]:
    """Rasterise a plate; rotated corners are filled with the plate background."""
    rng = np.random.default_rng(seed)
    layers = layout_plate(spec)
    ink, mask = rotate_layers(layers, spec.rotation)
    img = shade(ink, spec) * mask + spec.background * (1 - mask)
    return degrade(img, spec, rng), layers.truth


def random_plate_spec(rng: np.random.Generator, text: str | None = None,
                      max_rotation: float = 4.0, scale_range=(0.8, 1.3)) -> PlateSpec:
    """Draw plate parameters from the ranges used for scenes and the character corpus."""
    if text is None:
        n = int(rng.integers(4, 9))
        text = "".join(rng.choice(list(ALPHABET), n))
    dark_on_light = rng.random() < 0.8
    bg = int(rng.integers(190, 246)) if dark_on_light else int(rng.integers(20, 70))
    ink = int(rng.integers(10, 70)) if dark_on_light else int(rng.integers(190, 246))
    return PlateSpec(
        text=text,
        font=int(rng.integers(len(PLATE_FONTS))),
        rotation=float(rng.uniform(-max_rotation, max_rotation)),
        border=str(rng.choice(["thin", "thick", "fake", "thin"])),
        fake_border_frac=float(rng.uniform(0.08, 0.2)),
        noise=float(rng.uniform(0, 8)),
        illumination=float(rng.uniform(0.8, 1.15)),
        blur=float(rng.uniform(0, 0.9)),
        scale=float(rng.uniform(*scale_range)),
        background=bg,
        ink=ink,
    )
