"""Deterministic synthetic thermal PV scenes with hotspot ground truth.

A scene is a scalar heat field in [0, 1]: a uniform irradiance floor, a grid
of slightly warmer PV modules separated by cool gaps, a smooth ambient
gradient, seeded sensor noise, and truncated elliptical Gaussian hot blobs
whose exact bounding boxes become the ground truth.  The field is rendered to
RGB through a small iron-style palette.  Everything is a pure function of the
scene spec, so identical specs give bit-identical pixels and labels.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from .dataset import AnnotatedImage
from .imageio import save_ppm
from .ops import FLOAT
from .postprocess import Detection

log = logging.getLogger(__name__)

# box coordinates snap to this dyadic grid so mirror-style augmentations
# round-trip bit-exactly through label files
COORD_GRID = 2048
_PLACEMENT_RETRIES = 60


@dataclass
class SceneSpec:
    seed: int = 0
    image_size: tuple[int, int] = (128, 128)          # (H, W)
    module_grid: tuple[int, int] = (3, 4)             # module rows, cols
    hotspot_count: tuple[int, int] = (1, 3)           # inclusive range
    hotspot_size: tuple[float, float] = (0.08, 0.22)  # normalized box sides
    gradient_strength: float = 0.08
    noise_amplitude: float = 0.02
    irradiance: float = 0.35                          # uniform background heat
    module_heat: float = 0.18
    min_contrast: float = 0.30                        # blob peak above field

    def __post_init__(self):
        lo, hi = self.hotspot_size
        if not (0.0 < lo <= hi <= 0.3):
            raise ValueError(f"hotspot sizes must lie in (0, 0.3], got {self.hotspot_size}")
        if self.hotspot_count[0] < 0 or self.hotspot_count[1] < self.hotspot_count[0]:
            raise ValueError(f"bad hotspot count range {self.hotspot_count}")


PRESETS = {
    "default": {},
    # uniformly hot modules with reduced blob contrast
    "high-irradiance": {
        "irradiance": 0.62,
        "module_heat": 0.12,
        "gradient_strength": 0.05,
        "min_contrast": 0.18,
    },
}


def preset_spec(name: str, **overrides) -> SceneSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset '{name}' (choose from {sorted(PRESETS)})")
    return SceneSpec(**{**PRESETS[name], **overrides})


def _snap(v: float) -> float:
    return round(v * COORD_GRID) / COORD_GRID


def _module_mask(spec: SceneSpec):
    """Heat bump per module plus a boolean in-module mask."""
    h, w = spec.image_size
    rows, cols = spec.module_grid
    margin = 0.03
    gap = 0.012
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    pitch_y = (1.0 - 2 * margin) / rows
    pitch_x = (1.0 - 2 * margin) / cols
    ry = (ys - margin) / pitch_y
    rx = (xs - margin) / pitch_x
    in_y = (ys >= margin) & (ys < 1.0 - margin) & ((ry % 1.0) > gap / pitch_y) \
        & ((ry % 1.0) < 1.0 - gap / pitch_y)
    in_x = (xs >= margin) & (xs < 1.0 - margin) & ((rx % 1.0) > gap / pitch_x) \
        & ((rx % 1.0) < 1.0 - gap / pitch_x)
    mask = in_y[:, None] & in_x[None, :]
    cell_y = np.clip(np.floor(ry).astype(int), 0, rows - 1)
    cell_x = np.clip(np.floor(rx).astype(int), 0, cols - 1)
    return mask, cell_y, cell_x


def render_components(spec: SceneSpec):
    """Returns (background, heat, boxes): the field before and after blobs."""
    h, w = spec.image_size
    rng = np.random.default_rng(spec.seed)
    mask, cell_y, cell_x = _module_mask(spec)
    rows, cols = spec.module_grid

    background = np.full((h, w), spec.irradiance, dtype=np.float64)
    per_module = spec.module_heat * (1.0 + 0.15 * rng.standard_normal((rows, cols)))
    background += np.where(mask, per_module[cell_y[:, None], cell_x[None, :]], -0.06)
    theta = rng.uniform(0, 2 * np.pi)
    us = (np.arange(w) + 0.5) / w - 0.5
    vs = (np.arange(h) + 0.5) / h - 0.5
    background += spec.gradient_strength * (
        np.cos(theta) * us[None, :] + np.sin(theta) * vs[:, None])
    noise = rng.normal(0.0, spec.noise_amplitude, size=(h, w))
    background += np.clip(noise, -3 * spec.noise_amplitude, 3 * spec.noise_amplitude)
    background = np.clip(background, 0.02, 0.95)

    heat = background.copy()
    count = int(rng.integers(spec.hotspot_count[0], spec.hotspot_count[1] + 1))
    boxes: list[Detection] = []
    placed = 0
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    for _ in range(count):
        ok = False
        for _ in range(_PLACEMENT_RETRIES):
            bw = _snap(rng.uniform(*spec.hotspot_size))
            bh = _snap(rng.uniform(*spec.hotspot_size))
            cx = _snap(rng.uniform(bw / 2 + 0.02, 1.0 - bw / 2 - 0.02))
            cy = _snap(rng.uniform(bh / 2 + 0.02, 1.0 - bh / 2 - 0.02))
            ci = min(int(cy * h), h - 1)
            cj = min(int(cx * w), w - 1)
            if not mask[ci, cj]:
                continue
            peak = background[ci, cj]
            amp = rng.uniform(spec.min_contrast + 0.05, spec.min_contrast + 0.25)
            # keep headroom so the clamp below cannot erode the contrast margin
            if peak + spec.min_contrast + 0.06 > 0.98:
                continue
            amp = min(amp, 0.98 - peak)
            if _touches_existing(boxes, cx, cy, bw, bh):
                continue
            du = (xs[None, :] - cx) / (bw / 2)
            dv = (ys[:, None] - cy) / (bh / 2)
            d2 = du * du + dv * dv
            blob = np.where(d2 <= 1.0, amp * np.exp(-2.5 * d2), 0.0)
            heat += blob
            boxes.append(Detection(0, 1.0, cx, cy, bw, bh))
            placed += 1
            ok = True
            break
        if not ok:
            log.warning("scene seed %d: placed %d of %d hotspots", spec.seed,
                        placed, count)
    heat = np.clip(heat, 0.0, 1.0)
    return background, heat, boxes


def _touches_existing(boxes: list[Detection], cx, cy, w, h, margin=0.01) -> bool:
    for b in boxes:
        if (abs(cx - b.cx) < (w + b.w) / 2 + margin
                and abs(cy - b.cy) < (h + b.h) / 2 + margin):
            return True
    return False


# iron-style palette stops: dark blue-black -> purple -> red -> amber -> white
_PALETTE_T = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
_PALETTE_RGB = np.array([
    (0.02, 0.01, 0.08),
    (0.35, 0.06, 0.42),
    (0.80, 0.22, 0.08),
    (0.98, 0.66, 0.08),
    (1.00, 0.98, 0.85),
])


def heat_to_rgb(heat: np.ndarray) -> np.ndarray:
    flat = np.clip(heat, 0.0, 1.0).ravel()
    channels = [np.interp(flat, _PALETTE_T, _PALETTE_RGB[:, c]) for c in range(3)]
    return np.stack(channels, axis=-1).reshape(*heat.shape, 3).astype(FLOAT)


def generate_scene(spec: SceneSpec, image_id: str | None = None) -> AnnotatedImage:
    _, heat, boxes = render_components(spec)
    if image_id is None:
        image_id = f"scene_{spec.seed:08d}"
    return AnnotatedImage(image_id, heat_to_rgb(heat), boxes)


def _scene_seed(split_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((split_seed, index)).generate_state(1)[0])


def generate_split(template: SceneSpec, count: int, seed: int, root: str,
                   split: str = "train") -> list[str]:
    """Writes ``count`` scenes into the dataset layout; returns image ids."""
    if count < 1:
        raise ValueError("count must be >= 1")
    img_dir = os.path.join(root, "images", split)
    lbl_dir = os.path.join(root, "labels", split)
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lbl_dir, exist_ok=True)
    ids = []
    for i in range(count):
        image_id = f"{split}_{i:04d}"
        scene = generate_scene(replace(template, seed=_scene_seed(seed, i)), image_id)
        save_ppm(os.path.join(img_dir, image_id + ".ppm"), scene.pixels)
        with open(os.path.join(lbl_dir, image_id + ".txt"), "w", encoding="utf-8") as f:
            for b in scene.boxes:
                f.write(f"{b.class_id} {b.cx:.11f} {b.cy:.11f} {b.w:.11f} {b.h:.11f}\n")
        ids.append(image_id)
    _update_manifest(root, split, ids)
    return ids


def _update_manifest(root: str, split: str, ids: list[str]) -> None:
    path = os.path.join(root, "manifest.txt")
    entries: dict[str, list[str]] = {}
    if os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            for line in f:
                parts = line.split()
                if len(parts) == 2:
                    entries.setdefault(parts[0], []).append(parts[1])
    entries[split] = ids
    order = {name: i for i, name in enumerate(("train", "val", "test"))}
    with open(path, "w", encoding="utf-8") as f:
        for name in sorted(entries, key=lambda s: (order.get(s, 99), s)):
            for image_id in entries[name]:
                f.write(f"{name} {image_id}\n")
