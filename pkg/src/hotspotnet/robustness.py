"""Robustness sweeps: re-run inference under pixel-level transforms and
compare detections against the identity baseline.

Each suite row applies one transform to every image, evaluates mAP on the
transformed split, and reports per-image confidence deltas for detections
that match a baseline detection (greedy same-class IoU >= 0.5 pairing).  The
identity transform is always included as a control.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import AnnotatedImage
from .evaluation import evaluate_detections
from .infer import detect_batch
from .model import Detector
from .postprocess import Detection, NMSConfig, iou
from .transforms import adjust_brightness_contrast, gaussian_blur, to_grayscale

PixelTransform = Callable[[np.ndarray], np.ndarray]

# the standard sweep grid: brightness/contrast combinations, grayscale, blur
TRANSFORMS: dict[str, PixelTransform] = {
    "identity": lambda px: px,
    "brightness-40_contrast-40": lambda px: adjust_brightness_contrast(px, -0.40, 0.60),
    "brightness+25": lambda px: adjust_brightness_contrast(px, 0.25, 1.00),
    "contrast+25": lambda px: adjust_brightness_contrast(px, 0.00, 1.25),
    "brightness-35_contrast-35": lambda px: adjust_brightness_contrast(px, -0.35, 0.65),
    "grayscale": to_grayscale,
    "blur_sigma1": lambda px: gaussian_blur(px, 1.0),
    "blur_sigma2": lambda px: gaussian_blur(px, 2.0),
}

SUITES = {
    "brightness-contrast": ["identity", "brightness-40_contrast-40", "brightness+25",
                            "contrast+25", "brightness-35_contrast-35"],
    "grayscale": ["identity", "grayscale"],
    "blur": ["identity", "blur_sigma1", "blur_sigma2"],
    "all": list(TRANSFORMS),
}


@dataclass
class ImageDelta:
    image_id: str
    baseline_count: int
    transformed_count: int
    matched: int
    mean_conf_delta: float  # mean over matched pairs; 0.0 when nothing matched


@dataclass
class TransformResult:
    name: str
    map_value: float
    mean_conf_delta: float
    matched_total: int
    per_image: list[ImageDelta] = field(default_factory=list)
    identical_to_baseline: bool = False


def _pair_deltas(baseline: list[Detection], transformed: list[Detection],
                 pair_iou: float = 0.5) -> tuple[int, float]:
    taken = [False] * len(transformed)
    deltas = []
    for b in sorted(baseline, key=lambda d: -d.confidence):
        best, best_iou = -1, pair_iou
        for ti, t in enumerate(transformed):
            if taken[ti] or t.class_id != b.class_id:
                continue
            ov = iou(b, t)
            if ov >= best_iou:
                best, best_iou = ti, ov
        if best >= 0:
            taken[best] = True
            deltas.append(transformed[best].confidence - b.confidence)
    return len(deltas), float(np.mean(deltas)) if deltas else 0.0


def run_suite(model: Detector, items: list[AnnotatedImage], suite: str = "all",
              conf_threshold: float = 0.25, nms_cfg: NMSConfig | None = None,
              eval_iou: float = 0.5, batch_size: int = 16) -> list[TransformResult]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite '{suite}' (choose from {sorted(SUITES)})")
    if nms_cfg is None:
        nms_cfg = NMSConfig()
    num_classes = model.config.head.num_classes
    baseline = detect_batch(model, [it.pixels for it in items], conf_threshold,
                            nms_cfg, batch_size)
    results = []
    for name in SUITES[suite]:
        fn = TRANSFORMS[name]
        preds = detect_batch(model, [fn(it.pixels) for it in items],
                             conf_threshold, nms_cfg, batch_size)
        report = evaluate_detections(
            [(it.image_id, p, it.boxes) for it, p in zip(items, preds)],
            eval_iou, num_classes)
        per_image, deltas, matched_total = [], [], 0
        for it, base, trans in zip(items, baseline, preds):
            matched, mean_delta = _pair_deltas(base, trans)
            matched_total += matched
            if matched:
                deltas.append((matched, mean_delta))
            per_image.append(ImageDelta(it.image_id, len(base), len(trans),
                                        matched, mean_delta))
        overall = (sum(m * d for m, d in deltas) / matched_total
                   if matched_total else 0.0)
        results.append(TransformResult(
            name=name, map_value=report.map_value, mean_conf_delta=overall,
            matched_total=matched_total, per_image=per_image,
            identical_to_baseline=(preds == baseline)))
    return results


def write_report(results: list[TransformResult], out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "robustness.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write("transform,image,baseline_dets,transformed_dets,matched,"
                "mean_conf_delta\n")
        for res in results:
            for row in res.per_image:
                f.write(f"{res.name},{row.image_id},{row.baseline_count},"
                        f"{row.transformed_count},{row.matched},"
                        f"{row.mean_conf_delta:.6f}\n")
    summary = os.path.join(out_dir, "robustness_summary.csv")
    with open(summary, "w", encoding="utf-8") as f:
        f.write("transform,map,mean_conf_delta,matched,identical_to_baseline\n")
        for res in results:
            f.write(f"{res.name},{res.map_value:.6f},{res.mean_conf_delta:.6f},"
                    f"{res.matched_total},{int(res.identical_to_baseline)}\n")
    return path
