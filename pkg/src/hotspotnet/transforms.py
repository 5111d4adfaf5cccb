"""Preprocessing, training augmentations, and robustness transforms.

All transforms preserve tensor shape, keep pixel values in [0, 1], and are
pure: every random choice comes from a caller-supplied generator, so seeded
augmentation streams reproduce exactly.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .dataset import AnnotatedImage
from .ops import FLOAT
from .postprocess import Detection


def preprocess(pixels: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Resize to the model resolution and normalize [0,1] -> [-1,1]
    (per-channel mean 0.5, scale 0.5)."""
    th, tw = target_hw
    x = np.ascontiguousarray(pixels, dtype=FLOAT)[None]
    if x.shape[1:3] != (th, tw):
        x = ops.resize_bilinear(x, th, tw)
    return ((x[0] - FLOAT(0.5)) / FLOAT(0.5)).astype(FLOAT)


def flip_horizontal(img: AnnotatedImage) -> AnnotatedImage:
    """Mirror pixels left-right and reflect box centers: cx -> 1 - cx."""
    boxes = [Detection(b.class_id, b.confidence, 1.0 - b.cx, b.cy, b.w, b.h)
             for b in img.boxes]
    return AnnotatedImage(img.image_id, img.pixels[:, ::-1].copy(), boxes)


def random_crop(img: AnnotatedImage, rng: np.random.Generator,
                scale_range: tuple[float, float] = (0.8, 1.0),
                min_visibility: float = 0.3) -> AnnotatedImage:
    """Crop a uniform-scale window, resize back, and remap boxes.

    Boxes are clipped to the window; any box retaining less than
    ``min_visibility`` of its original area is dropped (a crop that drops
    every box yields a valid negative sample).
    """
    h, w, _ = img.pixels.shape
    scale = float(rng.uniform(scale_range[0], scale_range[1]))
    ch = max(int(round(scale * h)), 1)
    cw = max(int(round(scale * w)), 1)
    r0 = int(rng.integers(0, h - ch + 1))
    c0 = int(rng.integers(0, w - cw + 1))
    window = img.pixels[r0:r0 + ch, c0:c0 + cw]
    resized = ops.resize_bilinear(
        np.ascontiguousarray(window, dtype=FLOAT)[None], h, w)[0]
    # normalized window for the box affine remap (must match the pixel crop)
    wx0, wy0 = c0 / w, r0 / h
    wsx, wsy = cw / w, ch / h
    boxes = []
    for b in img.boxes:
        x1, y1, x2, y2 = b.corners()
        nx1, nx2 = max(x1, wx0), min(x2, wx0 + wsx)
        ny1, ny2 = max(y1, wy0), min(y2, wy0 + wsy)
        if nx2 <= nx1 or ny2 <= ny1:
            continue
        if (nx2 - nx1) * (ny2 - ny1) < min_visibility * b.area():
            continue
        cx = ((nx1 + nx2) / 2.0 - wx0) / wsx
        cy = ((ny1 + ny2) / 2.0 - wy0) / wsy
        boxes.append(Detection(b.class_id, b.confidence, cx, cy,
                               (nx2 - nx1) / wsx, (ny2 - ny1) / wsy))
    return AnnotatedImage(img.image_id, np.clip(resized, 0.0, 1.0), boxes)


def adjust_brightness_contrast(pixels: np.ndarray, brightness_delta: float,
                               contrast_factor: float) -> np.ndarray:
    """out = clamp((in - 0.5) * contrast + 0.5 + brightness, 0, 1); mid-gray
    is the contrast pivot, so a -40%/-40% change is (delta=-0.4, factor=0.6)."""
    if not -1.0 <= brightness_delta <= 1.0:
        raise ValueError(f"brightness delta {brightness_delta} outside [-1, 1]")
    if contrast_factor <= 0:
        raise ValueError(f"contrast factor must be positive, got {contrast_factor}")
    x = np.asarray(pixels, dtype=FLOAT)
    out = (x - FLOAT(0.5)) * FLOAT(contrast_factor) + FLOAT(0.5) + FLOAT(brightness_delta)
    return np.clip(out, 0.0, 1.0).astype(FLOAT)


GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=FLOAT)


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Luminance 0.299 R + 0.587 G + 0.114 B replicated to all channels."""
    lum = np.asarray(pixels, dtype=FLOAT) @ GRAY_WEIGHTS
    return np.repeat(lum[..., None], 3, axis=2).astype(FLOAT)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return (k / k.sum()).astype(FLOAT)


def gaussian_blur(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur; borders handled by clamping coordinates."""
    kernel = gaussian_kernel1d(sigma)
    radius = len(kernel) // 2
    x = np.asarray(pixels, dtype=FLOAT)
    padded = np.pad(x, ((radius, radius), (0, 0), (0, 0)), mode="edge")
    rows = np.zeros_like(x)
    for t, kv in enumerate(kernel):
        rows += kv * padded[t:t + x.shape[0]]
    padded = np.pad(rows, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(x)
    for t, kv in enumerate(kernel):
        out += kv * padded[:, t:t + x.shape[1]]
    return np.clip(out, 0.0, 1.0).astype(FLOAT)
