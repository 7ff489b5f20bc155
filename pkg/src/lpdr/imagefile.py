"""Reading and writing PGM and PNG images."""
from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .imaging import check_image, to_grayscale


def read_image(path) -> np.ndarray:
    """Load an image file as an 8-bit grayscale array (colour goes through luminance)."""
    path = os.fspath(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "1", "P", "LA"):
                return np.asarray(im.convert("L"), dtype=np.uint8).copy()
            if im.mode.startswith("I"):
                a = np.asarray(im, dtype=np.float64)
                top = 65535.0 if a.max() > 255 else 255.0
                return np.floor(a * 255.0 / top + 0.5).astype(np.uint8)
            return to_grayscale(np.asarray(im.convert("RGB")))
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"cannot read image {path}: {e}") from None


def write_image(path, img) -> None:
    """Write ``img``; the format follows the suffix (.pgm, .png, ...)."""
    img = check_image(img).astype(np.uint8, copy=False)
    Image.fromarray(img).save(os.fspath(path))
