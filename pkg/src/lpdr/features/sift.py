"""Scale-invariant keypoints and 128-d gradient-histogram descriptors.

Difference-of-Gaussians extrema are searched over a small pyramid (three
octaves, three intervals each, no initial upsampling), refined to sub-pixel
accuracy, screened for contrast and edge response, given one or more
dominant orientations and described by a 4x4 grid of 8-bin orientation
histograms.

Everything works on a stack of equally sized images at once, since a frame
hands over all its character crops together; a single image is a stack of
one.  Geometry is in image coordinates: x to the right, y down, angles
measured from +x toward +y.  The per-pixel loops are compiled with numba.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

N_OCTAVES = 3
N_INTERVALS = 3
SIGMA0 = 1.6
INPUT_SIGMA = 0.5
CONTRAST_THRESHOLD = 0.03
EDGE_RATIO = 10.0
BORDER = 1
MAX_REFINE_STEPS = 5

ORI_BINS = 36
ORI_PEAK_RATIO = 0.8
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0 * ORI_SIGMA_FACTOR

DESC_WIDTH = 4
DESC_BINS = 8
DESC_SCALE = 3.0
DESC_CLIP = 0.2
DESC_LEN = DESC_WIDTH * DESC_WIDTH * DESC_BINS

MIN_SIZE = 16
DENSE_MIN_KEYPOINTS = 4
DENSE_RADIUS = 8.0


@dataclass(frozen=True)
class Keypoint:
    x: float          # image coordinates
    y: float
    sigma: float      # blur scale in image pixels
    angle: float      # degrees in [0, 360)
    octave: int
    layer: int
    response: float


# --- scale space -----------------------------------------------------------

def gaussian_kernel(sigma: float, truncate: float = 4.0) -> np.ndarray:
    r = int(truncate * sigma + 0.5)
    k = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    return k / k.sum()


@njit(cache=True)
def _mirror(i, n):
    # reflect-101 index, repeated for kernels wider than the image
    if n == 1:
        return 0
    period = 2 * n - 2
    i = abs(i) % period
    return period - i if i >= n else i


@njit(cache=True, fastmath=True)
def _sep_filter(stack, k):
    n, h, w = stack.shape
    nk = len(k)
    r = nk // 2
    out = np.zeros((n, h, w))
    tmp = np.zeros((h, w))
    buf = np.empty(w + 2 * r)
    rows = np.empty((h, nk), dtype=np.int64)
    for y in range(h):
        for t in range(nk):
            rows[y, t] = _mirror(y + t - r, h)
    for m in range(n):
        tmp[:] = 0.0
        for y in range(h):
            for x in range(w + 2 * r):
                buf[x] = stack[m, y, _mirror(x - r, w)]
            for t in range(nk):
                kt = k[t]
                for x in range(w):
                    tmp[y, x] += kt * buf[x + t]
        for y in range(h):
            for t in range(nk):
                kt = k[t]
                src = rows[y, t]
                for x in range(w):
                    out[m, y, x] += kt * tmp[src, x]
    return out


def blur(stack, sigma: float) -> np.ndarray:
    """Separable Gaussian over the last two axes with mirrored (reflect-101) borders."""
    a = np.asarray(stack, dtype=np.float64)
    flat = np.ascontiguousarray(a.reshape((-1,) + a.shape[-2:]))
    return _sep_filter(flat, gaussian_kernel(sigma)).reshape(a.shape)


def gaussian_pyramid(stack, n_octaves: int = N_OCTAVES, intervals: int = N_INTERVALS,
                     sigma0: float = SIGMA0) -> list[np.ndarray]:
    """Per octave an ``(n, intervals + 3, h, w)`` array of progressively blurred images.

    The input is assumed to carry a blur of 0.5 px already.  Each octave
    starts from the layer of the previous one at twice ``sigma0``, taking
    every second pixel.
    """
    k = 2.0 ** (1.0 / intervals)
    steps = [np.sqrt((sigma0 * k ** s) ** 2 - (sigma0 * k ** (s - 1)) ** 2)
             for s in range(1, intervals + 3)]
    base = blur(np.asarray(stack, dtype=np.float64),
                np.sqrt(sigma0 ** 2 - INPUT_SIGMA ** 2))
    pyr = []
    for o in range(n_octaves):
        if o > 0:
            base = pyr[-1][:, intervals, ::2, ::2]
            if min(base.shape[1:]) < 3:
                break
        layers = [base]
        for sig in steps:
            layers.append(blur(layers[-1], sig))
        pyr.append(np.ascontiguousarray(np.stack(layers, axis=1)))
    return pyr


@njit(cache=True, fastmath=True)
def _polar(stack, mag, ang):
    n, h, w = stack.shape
    for m in range(n):
        for y in range(1, h - 1):
            for x in range(1, w - 1):
                dx = stack[m, y, x + 1] - stack[m, y, x - 1]
                dy = stack[m, y + 1, x] - stack[m, y - 1, x]
                mag[m, y, x] = np.sqrt(dx * dx + dy * dy)
                a = np.degrees(np.arctan2(dy, dx))
                ang[m, y, x] = a + 360.0 if a < 0 else a


def polar_gradients(stack) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference magnitude and angle (degrees in [0, 360)) over the last two axes.

    The outermost rows and columns have no centred difference and get zero
    magnitude.
    """
    a = np.asarray(stack, dtype=np.float64)
    flat = np.ascontiguousarray(a.reshape((-1,) + a.shape[-2:]))
    mag = np.zeros_like(flat)
    ang = np.zeros_like(flat)
    if min(flat.shape[1:]) >= 3:
        _polar(flat, mag, ang)
    ang[ang >= 360.0] = 0.0
    return mag.reshape(a.shape), ang.reshape(a.shape)


# --- keypoint localisation -------------------------------------------------

@njit(cache=True)
def _derivatives(dog, s, y, x):
    v = dog[s, y, x]
    g = np.empty(3)
    h = np.empty((3, 3))
    g[0] = 0.5 * (dog[s, y, x + 1] - dog[s, y, x - 1])
    g[1] = 0.5 * (dog[s, y + 1, x] - dog[s, y - 1, x])
    g[2] = 0.5 * (dog[s + 1, y, x] - dog[s - 1, y, x])
    h[0, 0] = dog[s, y, x + 1] + dog[s, y, x - 1] - 2 * v
    h[1, 1] = dog[s, y + 1, x] + dog[s, y - 1, x] - 2 * v
    h[2, 2] = dog[s + 1, y, x] + dog[s - 1, y, x] - 2 * v
    h[0, 1] = h[1, 0] = 0.25 * (dog[s, y + 1, x + 1] - dog[s, y + 1, x - 1]
                                - dog[s, y - 1, x + 1] + dog[s, y - 1, x - 1])
    h[0, 2] = h[2, 0] = 0.25 * (dog[s + 1, y, x + 1] - dog[s + 1, y, x - 1]
                                - dog[s - 1, y, x + 1] + dog[s - 1, y, x - 1])
    h[1, 2] = h[2, 1] = 0.25 * (dog[s + 1, y + 1, x] - dog[s + 1, y - 1, x]
                                - dog[s - 1, y + 1, x] + dog[s - 1, y - 1, x])
    return g, h


@njit(cache=True)
def _is_extremum(dog, s, y, x):
    v = dog[s, y, x]
    is_max = v > 0
    for ds in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if ds == 0 and dy == 0 and dx == 0:
                    continue
                u = dog[s + ds, y + dy, x + dx]
                if is_max:
                    if u >= v:
                        return False
                elif u <= v:
                    return False
    return True


@njit(cache=True)
def _find_keypoints(dogs, contrast, edge_ratio, border, max_steps):
    """Rows of (image, x, y, layer, layer offset, |response|) in octave coordinates."""
    n_img, n, h, w = dogs.shape
    rows = []
    pre = 0.5 * contrast
    for m in range(n_img):
        dog = dogs[m]
        for s in range(1, n - 1):
            for y in range(border, h - border):
                for x in range(border, w - border):
                    if abs(dog[s, y, x]) <= pre or not _is_extremum(dog, s, y, x):
                        continue
                    xi, yi, si = x, y, s
                    ok = False
                    off = np.zeros(3)
                    g = np.zeros(3)
                    for _ in range(max_steps):
                        g, hm = _derivatives(dog, si, yi, xi)
                        if abs(np.linalg.det(hm)) < 1e-12:
                            break
                        off = -np.linalg.solve(hm, g)
                        if abs(off[0]) < 0.5 and abs(off[1]) < 0.5 and abs(off[2]) < 0.5:
                            ok = True
                            break
                        xi += int(np.round(off[0]))
                        yi += int(np.round(off[1]))
                        si += int(np.round(off[2]))
                        if si < 1 or si > n - 2 or yi < border or yi >= h - border \
                                or xi < border or xi >= w - border:
                            break
                    if not ok:
                        continue
                    val = dog[si, yi, xi] + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2])
                    if abs(val) < contrast:
                        continue
                    _, hm = _derivatives(dog, si, yi, xi)
                    tr = hm[0, 0] + hm[1, 1]
                    det = hm[0, 0] * hm[1, 1] - hm[0, 1] * hm[0, 1]
                    # principal-curvature ratio test
                    if det <= 0 or tr * tr * edge_ratio >= (edge_ratio + 1) ** 2 * det:
                        continue
                    rows.append((float(m), xi + off[0], yi + off[1], float(si), off[2], abs(val)))
    out = np.empty((len(rows), 6))
    for i in range(len(rows)):
        for j in range(6):
            out[i, j] = rows[i][j]
    return out


# --- orientation -----------------------------------------------------------

@njit(cache=True)
def _orientation_hist(mag, ang, x, y, radius, weight_sigma, nbins):
    h, w = mag.shape
    hist = np.zeros(nbins)
    denom = -1.0 / (2.0 * weight_sigma * weight_sigma)
    for i in range(max(-radius, 1 - y), min(radius, h - 2 - y) + 1):
        for j in range(max(-radius, 1 - x), min(radius, w - 2 - x) + 1):
            m = mag[y + i, x + j]
            if m == 0.0:
                continue
            b = int(np.floor(ang[y + i, x + j] * nbins / 360.0 + 0.5)) % nbins
            hist[b] += np.exp((i * i + j * j) * denom) * m
    # circular [1 4 6 4 1] smoothing
    sm = np.empty(nbins)
    for b in range(nbins):
        sm[b] = (hist[(b - 2) % nbins] + hist[(b + 2) % nbins]) / 16.0 \
            + (hist[(b - 1) % nbins] + hist[(b + 1) % nbins]) * 4.0 / 16.0 + hist[b] * 6.0 / 16.0
    return sm


@njit(cache=True)
def _dominant_orientations(hist, peak_ratio):
    n = len(hist)
    top = hist.max()
    out = []
    if top <= 0:
        return out
    for b in range(n):
        l, r = hist[(b - 1) % n], hist[(b + 1) % n]
        if hist[b] > l and hist[b] > r and hist[b] >= peak_ratio * top:
            shift = 0.5 * (l - r) / (l - 2 * hist[b] + r)
            out.append(((b + shift) * 360.0 / n) % 360.0)
    return out


def dominant_orientations(hist, peak_ratio: float = ORI_PEAK_RATIO) -> list[float]:
    """Interpolated angles (degrees) of histogram peaks within ``peak_ratio`` of the maximum."""
    return list(_dominant_orientations(np.asarray(hist, dtype=np.float64), peak_ratio))


@njit(cache=True)
def _assign_orientations(mags, angs, rows, sigma0, intervals, nbins, peak_ratio,
                         sigma_factor, radius_factor):
    """One output row (image, x, y, layer, sigma, angle, response) per dominant orientation."""
    out = []
    for k in range(rows.shape[0]):
        m, x, y, layer, ds, resp = rows[k]
        mi, li = int(m), int(layer)
        sig = sigma0 * 2.0 ** ((layer + ds) / intervals)
        hist = _orientation_hist(mags[mi, li], angs[mi, li], int(np.round(x)), int(np.round(y)),
                                 int(np.round(radius_factor * sig)), sigma_factor * sig, nbins)
        for a in _dominant_orientations(hist, peak_ratio):
            out.append((m, x, y, layer, sig, a, resp))
    res = np.empty((len(out), 7))
    for i in range(len(out)):
        for j in range(7):
            res[i, j] = out[i][j]
    return res


# --- descriptor ------------------------------------------------------------

@njit(cache=True)
def _normalize_clip(v, clip):
    nrm = np.sqrt(np.sum(v * v))
    if nrm == 0.0:
        return v
    v = v / nrm
    for k in range(len(v)):
        if v[k] > clip:
            v[k] = clip
    nrm = np.sqrt(np.sum(v * v))
    return v / nrm


@njit(cache=True)
def _descriptor(mag, ang, x, y, angle_deg, hist_width, d, nbins, clip):
    h, w = mag.shape
    rad = np.radians(angle_deg)
    cos_t, sin_t = np.cos(rad) / hist_width, np.sin(rad) / hist_width
    radius = int(np.round(hist_width * np.sqrt(2.0) * (d + 1) * 0.5))
    radius = min(radius, int(np.sqrt(h * h + w * w)))
    exp_scale = -1.0 / (0.5 * d * d)
    bins_per_deg = nbins / 360.0
    hist = np.zeros((d + 2, d + 2, nbins))
    for i in range(max(-radius, 1 - y), min(radius, h - 2 - y) + 1):
        yy = y + i
        for j in range(max(-radius, 1 - x), min(radius, w - 2 - x) + 1):
            xx = x + j
            m = mag[yy, xx]
            if m == 0.0:
                continue
            # offset expressed in the keypoint frame, in histogram cells
            c_rot = j * cos_t + i * sin_t
            r_rot = -j * sin_t + i * cos_t
            rbin = r_rot + d / 2 - 0.5
            cbin = c_rot + d / 2 - 0.5
            if not (-1 < rbin < d and -1 < cbin < d):
                continue
            obin = ((ang[yy, xx] - angle_deg) % 360.0) * bins_per_deg
            wgt = np.exp((c_rot * c_rot + r_rot * r_rot) * exp_scale) * m
            r0, c0, o0 = int(np.floor(rbin)), int(np.floor(cbin)), int(np.floor(obin))
            fr, fc, fo = rbin - r0, cbin - c0, obin - o0
            # trilinear split over (row, column, orientation) neighbours
            for a in range(2):
                wr = wgt * (fr if a else 1 - fr)
                for b in range(2):
                    wc = wr * (fc if b else 1 - fc)
                    for c in range(2):
                        wo = wc * (fo if c else 1 - fo)
                        hist[r0 + 1 + a, c0 + 1 + b, (o0 + c) % nbins] += wo
    out = np.empty(d * d * nbins)
    k = 0
    for r in range(d):
        for c in range(d):
            for o in range(nbins):
                out[k] = hist[r + 1, c + 1, o]
                k += 1
    return _normalize_clip(out, clip)


@njit(cache=True)
def _describe_all(mags, angs, kps, desc_scale, d, nbins, clip):
    out = np.empty((kps.shape[0], d * d * nbins))
    for k in range(kps.shape[0]):
        m, x, y, layer, sig, a = kps[k, 0], kps[k, 1], kps[k, 2], kps[k, 3], kps[k, 4], kps[k, 5]
        out[k] = _descriptor(mags[int(m), int(layer)], angs[int(m), int(layer)],
                             int(np.round(x)), int(np.round(y)), a, desc_scale * sig,
                             d, nbins, clip)
    return out


@njit(cache=True)
def _dense_all(mags, angs, centers, hist_width, d, nbins, clip):
    n = mags.shape[0]
    out = np.empty((n, centers.shape[0], d * d * nbins))
    for m in range(n):
        for k in range(centers.shape[0]):
            out[m, k] = _descriptor(mags[m], angs[m], centers[k, 0], centers[k, 1], 0.0,
                                    hist_width, d, nbins, clip)
    return out


# --- public entry points ---------------------------------------------------

def as_unit_stack(images) -> np.ndarray:
    """``(n, h, w)`` float64 stack; 8-bit inputs are divided by 255, floats are taken as is."""
    a = np.asarray(images)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected an image or a stack of images, got shape {a.shape}")
    f = a.astype(np.float64)
    return f / 255.0 if a.dtype == np.uint8 else f


def sift_batch(images) -> list[tuple[list[Keypoint], np.ndarray]]:
    """Keypoints and ``(K, 128)`` descriptors for every image of an equally sized stack."""
    f = as_unit_stack(images)
    n = f.shape[0]
    kps: list[list[Keypoint]] = [[] for _ in range(n)]
    descs: list[list[np.ndarray]] = [[] for _ in range(n)]
    if min(f.shape[1:]) >= MIN_SIZE and n:
        for o, g in enumerate(gaussian_pyramid(f)):
            rows = _find_keypoints(g[:, 1:] - g[:, :-1], CONTRAST_THRESHOLD, EDGE_RATIO,
                                   BORDER, MAX_REFINE_STEPS)
            if not len(rows):
                continue
            # keypoints sit on layers 1..intervals; the rest stay unused
            mags, angs = polar_gradients(g[:, :N_INTERVALS + 1])
            oriented = _assign_orientations(mags, angs, rows, SIGMA0, N_INTERVALS, ORI_BINS,
                                            ORI_PEAK_RATIO, ORI_SIGMA_FACTOR, ORI_RADIUS_FACTOR)
            if not len(oriented):
                continue
            d = _describe_all(mags, angs, oriented, DESC_SCALE, DESC_WIDTH, DESC_BINS, DESC_CLIP)
            scale = 2.0 ** o
            for (m, x, y, layer, sig, a, resp), vec in zip(oriented.tolist(), d):
                kps[int(m)].append(Keypoint(x * scale, y * scale, sig * scale, a, o, int(layer),
                                            resp))
                descs[int(m)].append(vec)
    return [(k, np.array(v).reshape(-1, DESC_LEN)) for k, v in zip(kps, descs)]


def sift_descriptors(img) -> list[tuple[Keypoint, np.ndarray]]:
    """(keypoint, 128-d descriptor) pairs; images smaller than 16x16 give none."""
    kps, d = sift_batch(np.asarray(img)[None])[0]
    return list(zip(kps, d))


def dense_centers(shape, grid: int = DESC_WIDTH) -> np.ndarray:
    h, w = shape
    return np.array([(int(round((j + 0.5) * w / grid - 0.5)), int(round((i + 0.5) * h / grid - 0.5)))
                     for i in range(grid) for j in range(grid)], dtype=np.int64)


def dense_batch(images, grid: int = DESC_WIDTH, radius: float = DENSE_RADIUS) -> np.ndarray:
    """Upright descriptors on a ``grid`` x ``grid`` lattice of patches; ``(n, grid**2, 128)``."""
    f = as_unit_stack(images)
    sigma = 2.0 * radius / (DESC_WIDTH * DESC_SCALE)
    mags, angs = polar_gradients(blur(f, np.sqrt(sigma ** 2 - INPUT_SIGMA ** 2)))
    return _dense_all(mags, angs, dense_centers(f.shape[1:], grid), DESC_SCALE * sigma,
                      DESC_WIDTH, DESC_BINS, DESC_CLIP)


def dense_descriptors(img, grid: int = DESC_WIDTH, radius: float = DENSE_RADIUS) -> np.ndarray:
    return dense_batch(np.asarray(img)[None], grid, radius)[0]


def char_descriptor_batch(images, min_keypoints: int = DENSE_MIN_KEYPOINTS) -> list[np.ndarray]:
    """Per image ``(K, 128)`` descriptors, using the dense grid where fewer than ``min_keypoints``."""
    f = as_unit_stack(images)
    out = [d for _, d in sift_batch(f)]
    sparse = [i for i, d in enumerate(out) if len(d) < min_keypoints]
    if sparse:
        dense = dense_batch(f[sparse])
        for i, d in zip(sparse, dense):
            out[i] = d
    return out


def char_descriptors(img, min_keypoints: int = DENSE_MIN_KEYPOINTS) -> np.ndarray:
    return char_descriptor_batch(np.asarray(img)[None], min_keypoints)[0]
