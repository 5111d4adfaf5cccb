"""Detections, box overlap, and greedy non-maximum suppression."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Detection:
    """One predicted (or ground-truth) box in normalized center coordinates."""
    class_id: int
    confidence: float
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box dims must be positive, got w={self.w} h={self.h}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    def area(self) -> float:
        return self.w * self.h

    def to_line(self, image_id: str) -> str:
        return (f"{image_id} {self.class_id} {self.confidence:.4f} "
                f"{self.cx:.6f} {self.cy:.6f} {self.w:.6f} {self.h:.6f}")


def detection_from_line(line: str) -> tuple[str, Detection]:
    fields = line.split()
    if len(fields) != 7:
        raise ValueError(f"detection line must have 7 fields, got {len(fields)}: {line!r}")
    image_id = fields[0]
    class_id = int(fields[1])
    conf, cx, cy, w, h = (float(v) for v in fields[2:])
    return image_id, Detection(class_id, conf, cx, cy, w, h)


@dataclass
class NMSConfig:
    iou_threshold: float = 0.5
    max_detections: int = 300

    def __post_init__(self):
        if not (0.0 <= self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must be in [0,1], got {self.iou_threshold}")


def iou_xywh(ax: float, ay: float, aw: float, ah: float,
             bx: float, by: float, bw: float, bh: float) -> float:
    """Intersection-over-union of two center-form boxes (float64 math)."""
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValueError("iou requires positive box dimensions")
    ix = min(ax + aw / 2.0, bx + bw / 2.0) - max(ax - aw / 2.0, bx - bw / 2.0)
    iy = min(ay + ah / 2.0, by + bh / 2.0) - max(ay - ah / 2.0, by - bh / 2.0)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (aw * ah + bw * bh - inter)


def iou(a: Detection, b: Detection) -> float:
    return iou_xywh(a.cx, a.cy, a.w, a.h, b.cx, b.cy, b.w, b.h)


def nms(dets: list[Detection], cfg: NMSConfig | None = None) -> list[Detection]:
    """Greedy suppression: keep the most confident detection, drop remaining
    same-class detections overlapping it beyond the IoU threshold, repeat.

    Output is ordered by descending confidence; ties break by input index, so
    results are fully deterministic.
    """
    if cfg is None:
        cfg = NMSConfig()
    for d in dets:
        if not math.isfinite(d.confidence):
            raise ValueError("nms requires finite confidences")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    kept: list[Detection] = []
    suppressed = [False] * len(dets)
    for oi, idx in enumerate(order):
        if suppressed[idx]:
            continue
        keep = dets[idx]
        kept.append(keep)
        if len(kept) >= cfg.max_detections:
            break
        for jdx in order[oi + 1:]:
            if suppressed[jdx] or dets[jdx].class_id != keep.class_id:
                continue
            if iou(keep, dets[jdx]) > cfg.iou_threshold:
                suppressed[jdx] = True
    return kept
