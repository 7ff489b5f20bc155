"""Pixel-grid primitives shared by every stage.

Images are plain 2-D ``numpy.uint8`` arrays indexed ``[row, col]`` with the
origin at the top-left, x growing rightward and y growing downward.  A
*binary* image holds only the values 0 and 255.
"""
from __future__ import annotations

import cv2
import numpy as np
from numba import njit

from .errors import DimensionError, ParameterError

GrayImage = np.ndarray
BinaryImage = np.ndarray
PixelVector = np.ndarray

_LUMA = np.array([0.299, 0.587, 0.114])

# 5x5 Gaussian (sigma 1.0), applied separably
_GAUSS_1D = np.exp(-0.5 * np.arange(-2, 3, dtype=np.float64) ** 2)
_GAUSS_1D /= _GAUSS_1D.sum()
_SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0])
_SOBEL_DIFF = np.array([-1.0, 0.0, 1.0])
_TAN_22_5 = np.tan(np.pi / 8)


def check_image(img, name: str = "image") -> np.ndarray:
    """Return ``img`` as a 2-D array, raising DimensionError when it is empty."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} has zero dimension: {arr.shape}")
    return arr


def to_grayscale(image) -> GrayImage:
    """Luminance conversion of an ``H x W x 3`` RGB array (round half up)."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        return check_image(arr).astype(np.uint8, copy=False)
    if arr.ndim != 3 or arr.shape[2] < 3:
        raise DimensionError(f"expected an RGB image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"image has zero dimension: {arr.shape}")
    luma = arr[..., :3].astype(np.float64) @ _LUMA
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def otsu_threshold(img: GrayImage) -> int | None:
    """Threshold t maximising between-class variance of ``{< t}`` vs ``{>= t}``.

    Returns None for a constant image.  Among equally good thresholds the
    smallest one wins.
    """
    img = check_image(img)
    hist = np.bincount(img.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    levels = np.arange(256, dtype=np.float64)
    # class 0 covers [0, t-1] for t = 1..255
    w0 = np.cumsum(hist)[:-1]
    s0 = np.cumsum(hist * levels)[:-1]
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return None
    mu0 = np.divide(s0, w0, out=np.zeros_like(s0), where=w0 > 0)
    mu1 = np.divide(s0[-1] + hist[-1] * 255.0 - s0, w1, out=np.zeros_like(s0), where=w1 > 0)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    return int(np.argmax(between)) + 1


def binarize_otsu(img: GrayImage) -> BinaryImage:
    """Global Otsu binarisation; a constant image maps to all zeros."""
    img = check_image(img)
    t = otsu_threshold(img)
    if t is None:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.where(img >= t, 255, 0).astype(np.uint8)


def text_foreground(binary: BinaryImage) -> BinaryImage:
    """Invert a binary image whose central window is mostly 255.

    Strokes cover less area than the plate background between them, so after
    this call the text is 255 whatever the plate polarity.  Only the central
    window votes because dark frames and fake borders can outweigh the text
    region when the whole crop is counted.
    """
    binary = check_image(binary)
    h, w = binary.shape
    win = binary[h // 4:h - h // 4, w // 10:w - w // 10]
    if win.size == 0:
        win = binary
    if np.count_nonzero(win) * 2 > win.size:
        return 255 - binary
    return binary


def gradients(img: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    """Sobel x/y derivatives of the Gaussian-smoothed image (float64, mirrored borders)."""
    f = check_image(img).astype(np.float64)
    f = cv2.sepFilter2D(f, -1, _GAUSS_1D, _GAUSS_1D, borderType=cv2.BORDER_REFLECT_101)
    gx = cv2.sepFilter2D(f, -1, _SOBEL_DIFF, _SOBEL_SMOOTH, borderType=cv2.BORDER_REFLECT_101)
    gy = cv2.sepFilter2D(f, -1, _SOBEL_SMOOTH, _SOBEL_DIFF, borderType=cv2.BORDER_REFLECT_101)
    return gx, gy


# neighbour offsets (dy, dx) per quantised direction: 0, 45, 90, 135 degrees
_NMS_PREV = np.array([[0, -1], [-1, -1], [-1, 0], [1, -1]], dtype=np.int64)


@njit(cache=True)
def _nms_kernel(gx, gy, min_mag, prev_off):
    h, w = gx.shape
    mag = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            mag[y, x] = np.sqrt(gx[y, x] * gx[y, x] + gy[y, x] * gy[y, x])
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            m = mag[y, x]
            if not m > min_mag:
                continue
            ax, ay = abs(gx[y, x]), abs(gy[y, x])
            d = 1
            if ay <= _TAN_22_5 * ax:
                d = 0
            elif ax < _TAN_22_5 * ay:
                d = 2
            elif gx[y, x] * gy[y, x] < 0:
                d = 3
            dy, dx = prev_off[d, 0], prev_off[d, 1]
            py, px, ny, nx = y + dy, x + dx, y - dy, x - dx
            prev = mag[py, px] if 0 <= py < h and 0 <= px < w else 0.0
            nxt = mag[ny, nx] if 0 <= ny < h and 0 <= nx < w else 0.0
            if m > prev and m >= nxt:
                out[y, x] = m
    return out


@njit(cache=True)
def _hysteresis_kernel(nms, low, high):
    h, w = nms.shape
    out = np.zeros((h, w), dtype=np.uint8)
    stack = np.empty((h * w, 2), dtype=np.int64)
    for y0 in range(h):
        for x0 in range(w):
            if nms[y0, x0] < high or out[y0, x0]:
                continue
            out[y0, x0] = 255
            stack[0, 0], stack[0, 1] = y0, x0
            top = 1
            while top:
                top -= 1
                y, x = stack[top, 0], stack[top, 1]
                for ny in range(max(0, y - 1), min(h, y + 2)):
                    for nx in range(max(0, x - 1), min(w, x + 2)):
                        if not out[ny, nx] and nms[ny, nx] >= low:
                            out[ny, nx] = 255
                            stack[top, 0], stack[top, 1] = ny, nx
                            top += 1
    return out


def non_max_suppression(img: GrayImage, min_mag: float = 0.0) -> np.ndarray:
    """Gradient magnitude kept only where it is a ridge across the gradient.

    The direction is quantised to 0/45/90/135 degrees.  A pixel survives when
    its magnitude is strictly above the neighbour with the smaller x (smaller
    y for the vertical direction) and at least the other neighbour, so a
    symmetric ridge two pixels wide thins to one pixel.  Neighbours outside
    the image count as zero.  Pixels with magnitude not above ``min_mag``
    come back as zero.
    """
    gx, gy = gradients(img)
    return _nms_kernel(gx, gy, float(min_mag), _NMS_PREV)


def detect_edges(img: GrayImage, low: float = 50.0, high: float = 150.0) -> BinaryImage:
    """Canny edge map: 5x5 Gaussian, Sobel, NMS, hysteresis (8-connected)."""
    if not 0 <= low <= high <= 255:
        raise ParameterError(f"need 0 <= low <= high <= 255, got low={low} high={high}")
    # pixels below the low threshold can never become edges, so skip them
    nms = non_max_suppression(img, min_mag=np.nextafter(low, -np.inf) if low > 0 else 0.0)
    # a zero-magnitude pixel is never an edge, even with low == 0
    tiny = np.finfo(float).tiny
    return _hysteresis_kernel(nms, max(float(low), tiny), max(float(high), tiny))


def column_pixel_vector(binary: BinaryImage) -> PixelVector:
    """Number of 255-pixels in each column (the column sum divided by 255)."""
    binary = check_image(binary, "binary image")
    return np.count_nonzero(binary == 255, axis=0).astype(np.float64)
