"""End-to-end inference: preprocess -> forward -> decode -> NMS, plus
split-level evaluation built on top of it."""

from __future__ import annotations

import numpy as np

from .dataset import AnnotatedImage
from .evaluation import EvalReport, evaluate_detections
from .head import decode
from .model import Detector
from .postprocess import Detection, NMSConfig, nms
from .transforms import preprocess


def detect_image(model: Detector, pixels: np.ndarray, conf_threshold: float = 0.25,
                 nms_cfg: NMSConfig | None = None) -> list[Detection]:
    """Runs the full pipeline on one [0,1] RGB image of any resolution."""
    return detect_batch(model, [pixels], conf_threshold, nms_cfg)[0]


def detect_batch(model: Detector, images: list[np.ndarray],
                 conf_threshold: float = 0.25,
                 nms_cfg: NMSConfig | None = None,
                 batch_size: int = 16) -> list[list[Detection]]:
    if nms_cfg is None:
        nms_cfg = NMSConfig()
    target = model.config.backbone.input_resolution
    out: list[list[Detection]] = []
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        x = np.stack([preprocess(p, target) for p in chunk])
        grids = model.forward(x)
        for dets in decode(grids, model.config.head, conf_threshold):
            out.append(nms(dets, nms_cfg))
    return out


def evaluate_split(model: Detector, items: list[AnnotatedImage],
                   conf_threshold: float = 0.05, iou_threshold: float = 0.5,
                   nms_cfg: NMSConfig | None = None,
                   batch_size: int = 16) -> EvalReport:
    """Full decode+NMS pipeline over a split, matched against ground truth."""
    preds = detect_batch(model, [it.pixels for it in items], conf_threshold,
                         nms_cfg, batch_size)
    triples = [(it.image_id, p, it.boxes) for it, p in zip(items, preds)]
    return evaluate_detections(triples, iou_threshold,
                               model.config.head.num_classes)
