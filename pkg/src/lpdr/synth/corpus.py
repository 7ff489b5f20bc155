"""Character and scene corpora built from the renderers, plus manifest I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from ..errors import DataError, LpdrError, SpecError
from ..imagefile import read_image, write_image
from ..segmentation import CHAR_SIZE, SegmentationConfig, normalize_char, segment_plate
from .fonts import ALPHABET, DOCUMENT_FONTS, glyph, stroke_thickness
from .plates import PlateSpec, random_plate_spec, render_plate
from .scenes import BACKGROUNDS, SceneTruth, render_scene

SPLIT_FRACTIONS = (5 / 7, 1 / 7, 1 / 7)


@dataclass
class CharSet:
    """Normalised 32x32 character images (text = 255) with integer labels into ``classes``."""

    images: np.ndarray
    labels: np.ndarray
    classes: str = ALPHABET

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "CharSet":
        idx = np.asarray(idx, dtype=np.intp)
        return CharSet(self.images[idx], self.labels[idx], self.classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.classes))


def balanced_labels(n: int, rng: np.random.Generator, n_classes: int = len(ALPHABET)) -> np.ndarray:
    """``n`` labels in random order, every class appearing floor or ceil of n / n_classes times."""
    reps = np.full(n_classes, n // n_classes)
    reps[rng.permutation(n_classes)[:n % n_classes]] += 1
    return rng.permutation(np.repeat(np.arange(n_classes), reps))


def _chunk_lengths(n: int, rng: np.random.Generator, lo: int = 4, hi: int = 8) -> list[int]:
    """Split ``n`` characters into plate lengths within [lo, hi]."""
    if n < lo:
        raise DataError(f"need at least {lo} characters, got {n}")
    out = []
    left = n
    while left > 0:
        k = left if left <= hi else int(rng.integers(lo, min(hi, left - lo) + 1))
        out.append(k)
        left -= k
    return out


def plate_characters(spec: PlateSpec, seed: int,
                     seg_cfg: SegmentationConfig = SegmentationConfig()) -> list[np.ndarray] | None:
    """Render ``spec`` and cut it with the segmentation stage; None if the count is off."""
    img, _ = render_plate(spec, seed)
    try:
        seg = segment_plate(img, seg_cfg)
    except LpdrError:
        return None
    if len(seg.chars) != len(spec.text):
        return None
    return [c.image for c in seg.chars]


def char_corpus(n: int = 3000, seed: int = 0, max_rotation: float = 4.0,
                tries: int = 20) -> CharSet:
    """Class-balanced plate characters cut from rendered plates by the segmenter.

    Plates whose segmentation disagrees with the known character count are
    re-rendered with fresh distortion parameters; after ``tries`` failures a
    distortion-free rendering is used.
    """
    rng = np.random.default_rng(seed)
    labels = balanced_labels(n, rng)
    images = np.zeros((n, CHAR_SIZE, CHAR_SIZE), dtype=np.uint8)
    pos = 0
    for k in _chunk_lengths(n, rng):
        text = "".join(ALPHABET[i] for i in labels[pos:pos + k])
        chars = None
        for _ in range(tries):
            spec = random_plate_spec(rng, text=text, max_rotation=max_rotation)
            chars = plate_characters(spec, int(rng.integers(2**31)))
            if chars is not None:
                break
        if chars is None:
            chars = plate_characters(PlateSpec(text=text), 0)
        if chars is None:
            raise DataError(f"could not segment plate {text!r}")
        images[pos:pos + k] = np.stack(chars)
        pos += k
    return CharSet(images, labels.astype(np.int64))


def document_char(ch: str, rng: np.random.Generator) -> np.ndarray:
    """One printed-document style character: light fonts, small jitter, binarised."""
    face, weight = DOCUMENT_FONTS[int(rng.integers(len(DOCUMENT_FONTS)))]
    h = int(rng.integers(16, 40))
    g = glyph(ch, face, h, stroke_thickness(h, weight)).astype(np.float64)
    pad = 6
    img = np.pad(g, pad)
    angle = float(rng.uniform(-5, 5))
    rh, rw = img.shape
    m = cv2.getRotationMatrix2D((rw / 2, rh / 2), angle, 1.0)
    img = cv2.warpAffine(img, m, (rw, rh), flags=cv2.INTER_LINEAR)
    img = img + rng.normal(0, float(rng.uniform(0, 30)), img.shape)
    return normalize_char(np.where(img >= 128, 255, 0).astype(np.uint8))


def document_corpus(per_class: int = 200, seed: int = 1) -> CharSet:
    """Multi-font document characters used for pretraining (``per_class`` x 36 samples)."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat(np.arange(len(ALPHABET)), per_class))
    images = np.stack([document_char(ALPHABET[i], rng) for i in labels])
    return CharSet(images, labels.astype(np.int64))


def split_indices(labels, seed: int = 0, fractions=SPLIT_FRACTIONS):
    """Stratified train/val/test index arrays in the given proportions."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_val = int(round(len(idx) * fractions[1]))
        n_test = int(round(len(idx) * fractions[2]))
        n_train = len(idx) - n_val - n_test
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def scene_specs(n: int, seed: int = 0, lengths=(5, 8)) -> list[tuple[PlateSpec, int, int]]:
    """(plate spec, background id, scene seed) triples for a benchmark corpus."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        k = int(rng.integers(lengths[0], lengths[1] + 1))
        text = "".join(rng.choice(list(ALPHABET), k))
        out.append((random_plate_spec(rng, text=text), i % len(BACKGROUNDS),
                    int(rng.integers(2**31))))
    return out


def scene_corpus(n: int, seed: int = 0, lengths=(5, 8)) -> list[SceneTruth]:
    return [render_scene(spec, bg, s) for spec, bg, s in scene_specs(n, seed, lengths)]


# --- manifests -------------------------------------------------------------

def write_scene_corpus(out_dir, scenes: list[SceneTruth], specs=None, fmt: str = "pgm") -> Path:
    """Write images plus ``manifest.jsonl`` ({path, text, rect, spec}); returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for i, sc in enumerate(scenes):
            rel = f"images/scene_{i:05d}.{fmt}"
            write_image(out_dir / rel, sc.image)
            rec = {"path": rel, "text": sc.text, "rect": sc.rect.as_dict(),
                   "spec": specs[i] if specs is not None else None}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def write_char_corpus(out_dir, cs: CharSet, split=None, fmt: str = "pgm") -> Path:
    out_dir = Path(out_dir)
    (out_dir / "chars").mkdir(parents=True, exist_ok=True)
    names = ("train", "val", "test")
    which = np.full(len(cs), "", dtype=object)
    if split is not None:
        for name, idx in zip(names, split):
            which[idx] = name
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for i in range(len(cs)):
            rel = f"chars/char_{i:05d}.{fmt}"
            write_image(out_dir / rel, cs.images[i])
            rec = {"path": rel, "text": cs.classes[cs.labels[i]], "rect": None,
                   "spec": {"split": which[i] or None}}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> list[dict]:
    path = Path(path)
    recs = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{ln}: {e}") from None
            for key in ("path", "text"):
                if key not in rec:
                    raise DataError(f"{path}:{ln}: missing field {key!r}")
            recs.append(rec)
    return recs


def load_char_corpus(manifest, classes: str = ALPHABET) -> tuple[CharSet, dict]:
    """Read a character manifest back; returns the set and its split indices by name."""
    manifest = Path(manifest)
    recs = read_manifest(manifest)
    images, labels, splits = [], [], {}
    for i, rec in enumerate(recs):
        if rec["text"] not in classes or len(rec["text"]) != 1:
            raise DataError(f"label {rec['text']!r} is not a single known class")
        img = read_image(manifest.parent / rec["path"])
        if img.shape != (CHAR_SIZE, CHAR_SIZE):
            img = normalize_char(img)
        images.append(img)
        labels.append(classes.index(rec["text"]))
        name = (rec.get("spec") or {}).get("split")
        if name:
            splits.setdefault(name, []).append(i)
    cs = CharSet(np.stack(images), np.asarray(labels, dtype=np.int64), classes)
    return cs, {k: np.asarray(v) for k, v in splits.items()}


def check_spec_dict(d: dict) -> PlateSpec:
    try:
        return PlateSpec(**d)
    except TypeError as e:
        raise SpecError(str(e)) from None
