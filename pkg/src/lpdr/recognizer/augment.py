"""Random affine and photometric perturbation of 32x32 character images."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np


@dataclass(frozen=True)
class AugmentConfig:
    rotation_deg: float = 10.0
    translate_px: float = 5.0
    zoom: tuple[float, float] = (1.0, 1.3)
    shear_deg: float = 25.0
    invert: bool = True            # applied with probability 1/2
    noise: float = 0.1             # Gaussian deviation as a fraction of 255
    illumination: float = 0.2      # intensity scale drawn from [1 - x, 1 + x]

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, (1.0, 1.0), 0.0, False, 0.0, 0.0)


@dataclass(frozen=True)
class AugmentParams:
    rotation: float
    tx: float
    ty: float
    zoom: float
    shear: float
    invert: bool
    illumination: float


def sample_params(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    u = rng.uniform
    return AugmentParams(
        rotation=float(u(-cfg.rotation_deg, cfg.rotation_deg)),
        tx=float(u(-cfg.translate_px, cfg.translate_px)),
        ty=float(u(-cfg.translate_px, cfg.translate_px)),
        zoom=float(u(*cfg.zoom)),
        shear=float(u(-cfg.shear_deg, cfg.shear_deg)),
        invert=bool(cfg.invert and rng.random() < 0.5),
        illumination=float(u(1 - cfg.illumination, 1 + cfg.illumination)),
    )


def affine_matrix(p: AugmentParams, size: int) -> np.ndarray:
    """3x3 forward map: rotation, then translation, zoom and shear, all about the centre."""
    c = (size - 1) / 2.0
    t = np.radians(p.rotation)
    rot = np.array([[np.cos(t), -np.sin(t), 0], [np.sin(t), np.cos(t), 0], [0, 0, 1]])
    shift = np.array([[1, 0, p.tx], [0, 1, p.ty], [0, 0, 1]])
    zoom = np.diag([p.zoom, p.zoom, 1.0])
    shear = np.array([[1, np.tan(np.radians(p.shear)), 0], [0, 1, 0], [0, 0, 1]])
    to_c = np.array([[1, 0, -c], [0, 1, -c], [0, 0, 1]])
    back = np.array([[1, 0, c], [0, 1, c], [0, 0, 1]])
    return back @ shear @ zoom @ shift @ rot @ to_c


def apply_params(img: np.ndarray, p: AugmentParams, noise: float, rng: np.random.Generator) -> np.ndarray:
    size = img.shape[0]
    m = affine_matrix(p, size)
    out = img.astype(np.float64)
    if not np.allclose(m, np.eye(3)):
        out = cv2.warpAffine(out, m[:2], (img.shape[1], size), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    if p.invert:
        out = 255.0 - out
    if noise > 0:
        out = np.clip(out + rng.normal(0.0, noise * 255.0, out.shape), 0, 255)
    if p.illumination != 1.0:
        out = out * p.illumination
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def augment(img, cfg: AugmentConfig, rng_seed) -> np.ndarray:
    """One perturbed copy of ``img``; deterministic in ``rng_seed`` (an int or a Generator)."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    img = np.asarray(img)
    return apply_params(img, sample_params(cfg, rng), cfg.noise, rng)


def augment_batch(images, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(im, cfg, rng) for im in images]) if len(images) else np.asarray(images)
