"""Cluttered 480x640 scenes with one composited plate."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from ..detection import Rect
from ..errors import SpecError
from .plates import PlateSpec, degrade, layout_plate, rotate_layers, shade

SCENE_SHAPE = (480, 640)
BACKGROUNDS = ("smooth", "bricks", "guardrail", "clutter")


@dataclass(frozen=True)
class SceneTruth:
    image: np.ndarray
    rect: Rect
    text: str


def _smooth(rng, shape):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    a, b = rng.uniform(-0.15, 0.15, 2)
    base = rng.uniform(70, 170) + a * (yy - h / 2) + b * (xx - w / 2)
    blobs = cv2.GaussianBlur(rng.normal(0, 40, (h // 16, w // 16)), (0, 0), 2)
    return base + cv2.resize(blobs, (w, h), interpolation=cv2.INTER_CUBIC)


def _bricks(rng, shape):
    h, w = shape
    img = np.full(shape, rng.uniform(60, 110))
    bh, bw = int(rng.integers(14, 24)), int(rng.integers(40, 70))
    for r, y in enumerate(range(0, h, bh)):
        off = (bw // 2) * (r % 2)
        for x in range(-off, w, bw):
            img[y + 2:y + bh, max(0, x + 2):x + bw] = rng.uniform(110, 170)
    return img


def _guardrail(rng, shape):
    h, w = shape
    img = _smooth(rng, shape)
    y = int(rng.integers(h // 3, 2 * h // 3))
    for k in range(3):
        yy = y + 18 * k
        img[yy:yy + 8, :] = rng.uniform(170, 220)
    for x in range(int(rng.integers(0, 60)), w, int(rng.integers(80, 140))):
        img[y - 20:y + 70, x:x + 10] = rng.uniform(30, 70)
    return img


def _clutter(rng, shape):
    h, w = shape
    img = _smooth(rng, shape)
    for _ in range(25):
        x0, y0 = int(rng.integers(0, w - 20)), int(rng.integers(0, h - 20))
        x1, y1 = x0 + int(rng.integers(10, 120)), y0 + int(rng.integers(10, 90))
        cv2.rectangle(img, (x0, y0), (x1, y1), float(rng.uniform(0, 255)), int(rng.choice([-1, 1, 2])))
    # text-like scribbles, too small to pass the shape filter on their own
    img = np.clip(img, 0, 255).astype(np.uint8)
    for _ in range(12):
        x0, y0 = int(rng.integers(0, w - 60)), int(rng.integers(10, h))
        s = "".join(rng.choice(list("abcdefghkmnrstuvwxz"), int(rng.integers(3, 8))))
        cv2.putText(img, s, (x0, y0), cv2.FONT_HERSHEY_PLAIN, float(rng.uniform(0.6, 1.0)),
                    float(rng.uniform(0, 255)), 1, cv2.LINE_AA)
    return img.astype(np.float64)


_BACKGROUND_FNS = {"smooth": _smooth, "bricks": _bricks, "guardrail": _guardrail, "clutter": _clutter}


def draw_distractor(img, rng, rect: Rect) -> None:
    """Plate-shaped box whose column projection has at most two peaks."""
    fill = float(rng.uniform(0, 255))
    edge = float((fill + 128) % 256)
    cv2.rectangle(img, (rect.left, rect.top), (rect.right, rect.bottom), fill, -1)
    cv2.rectangle(img, (rect.left, rect.top), (rect.right, rect.bottom), edge, 2)
    if rng.random() < 0.5:
        # one vertical stripe adds a single broad peak
        x = int(rng.integers(rect.left + 5, max(rect.left + 6, rect.right - 15)))
        cv2.rectangle(img, (x, rect.top + 3), (x + 8, rect.bottom - 3), edge, -1)


def _place_distractors(rng, shape, avoid: Rect, n: int) -> list[Rect]:
    h, w = shape
    out: list[Rect] = []
    tries = 0
    while len(out) < n and tries < 200:
        tries += 1
        rw = int(rng.integers(70, 200))
        rh = max(15, int(rw / rng.uniform(2.5, 5.0)))
        x, y = int(rng.integers(2, w - rw - 2)), int(rng.integers(2, h - rh - 2))
        r = Rect(x, y, x + rw - 1, y + rh - 1)
        if any(_overlaps(r, o, 6) for o in out + [avoid]):
            continue
        out.append(r)
    return out


def _overlaps(a: Rect, b: Rect, pad: int) -> bool:
    return not (a.right + pad < b.left or b.right + pad < a.left
                or a.bottom + pad < b.top or b.bottom + pad < a.top)


def render_scene(spec: PlateSpec, background: int = 0, seed: int = 0,
                 n_distractors: int | None = None, shape=SCENE_SHAPE) -> SceneTruth:
    """Composite the plate at a random position onto a cluttered background."""
    if not 0 <= background < len(BACKGROUNDS):
        raise SpecError(f"background id must be in [0, {len(BACKGROUNDS)})")
    rng = np.random.default_rng(seed)
    h, w = shape
    layers = layout_plate(spec)
    ink, mask = rotate_layers(layers, spec.rotation)
    ph, pw = ink.shape
    if ph + 8 > h or pw + 8 > w:
        raise SpecError(f"plate {pw}x{ph} does not fit a {w}x{h} scene")

    img = _BACKGROUND_FNS[BACKGROUNDS[background]](rng, shape).astype(np.float64)
    x0 = int(rng.integers(4, w - pw - 4))
    y0 = int(rng.integers(4, h - ph - 4))
    # car body panel around the plate
    pad_x, pad_y = int(rng.integers(20, 80)), int(rng.integers(15, 60))
    body = float(rng.uniform(20, 235))
    img[max(0, y0 - pad_y):y0 + ph + pad_y, max(0, x0 - pad_x):x0 + pw + pad_x] = body

    ys, xs = np.nonzero(mask > 0.5)
    rect = Rect(x0 + int(xs.min()), y0 + int(ys.min()), x0 + int(xs.max()), y0 + int(ys.max()))
    if n_distractors is None:
        n_distractors = int(rng.integers(0, 4))
    for d in _place_distractors(rng, shape, Rect(x0 - pad_x, y0 - pad_y, x0 + pw + pad_x,
                                                 y0 + ph + pad_y), n_distractors):
        draw_distractor(img, rng, d)

    # the plate's outer ring (border line or bare background) must stand out from the panel
    outer = spec.ink if spec.border != "none" else spec.background
    if abs(body - outer) < 70:
        img[max(0, y0 - pad_y):y0 + ph + pad_y, max(0, x0 - pad_x):x0 + pw + pad_x] = \
            (body + 128) % 256
    region = img[y0:y0 + ph, x0:x0 + pw]
    img[y0:y0 + ph, x0:x0 + pw] = shade(ink, spec) * mask + region * (1 - mask)
    img = degrade(img, spec, rng)
    return SceneTruth(img, rect, spec.text)
