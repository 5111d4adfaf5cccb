"""Detection matching, average precision, and evaluation reports.

Matching follows the standard greedy protocol: within one image and class,
predictions are visited in descending confidence and claim the unmatched
ground-truth box of highest IoU when that IoU clears the threshold (TP),
otherwise they count as FP; each ground truth is claimable once and unmatched
ground truths are FN.  AP uses all-point interpolation: the precision curve is
made monotonically non-increasing from the right and integrated over recall.
Confidences are pooled across the whole split per class before ranking.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .postprocess import Detection, iou


@dataclass
class MatchedPrediction:
    image_id: str
    class_id: int
    confidence: float
    is_tp: bool


def match_detections(preds: list[Detection], gts: list[Detection],
                     iou_threshold: float) -> list[MatchedPrediction]:
    """Labels one image's predictions TP/FP against its ground truths."""
    labeled = []
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    taken = [False] * len(gts)
    for idx in order:
        p = preds[idx]
        best_iou, best_gt = 0.0, -1
        for gi, gt in enumerate(gts):
            if taken[gi] or gt.class_id != p.class_id:
                continue
            ov = iou(p, gt)
            if ov > best_iou:
                best_iou, best_gt = ov, gi
        is_tp = best_gt >= 0 and best_iou >= iou_threshold
        if is_tp:
            taken[best_gt] = True
        labeled.append(MatchedPrediction("", p.class_id, p.confidence, is_tp))
    return labeled


def average_precision(labeled: list[MatchedPrediction], total_gt: int) -> float:
    """All-point interpolated AP for one class from pooled labeled predictions."""
    if total_gt < 0:
        raise ValueError("total_gt must be >= 0")
    if total_gt == 0:
        return 1.0 if not labeled else 0.0
    ranked = sorted(labeled, key=lambda m: -m.confidence)
    tp_cum = 0
    precisions, recalls = [], []
    for i, m in enumerate(ranked):
        tp_cum += 1 if m.is_tp else 0
        precisions.append(tp_cum / (i + 1))
        recalls.append(tp_cum / total_gt)
    # monotone envelope from the right
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for p, r in zip(precisions, recalls):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return ap


def mean_average_precision(per_class_aps: dict[int, float]) -> float:
    if not per_class_aps:
        raise ValueError("mean_average_precision needs at least one class")
    vals = list(per_class_aps.values())
    # shifted accumulation keeps the mean of identical APs exactly that AP
    base = vals[0]
    return base + sum(v - base for v in vals) / len(vals)


@dataclass
class EvalReport:
    iou_threshold: float
    per_class_ap: dict[int, float]
    map_value: float
    pr_points: list[tuple[float, float]]   # (recall, precision) for class 0
    tp: int
    fp: int
    fn: int
    images: int = 0
    per_class_pr: dict[int, list[tuple[float, float]]] = field(default_factory=dict)

    def summary_line(self) -> str:
        return (f"map@{self.iou_threshold:.2f} {self.map_value:.6f} "
                f"classes {len(self.per_class_ap)} tp {self.tp} fp {self.fp} fn {self.fn}")

    def to_text(self) -> str:
        lines = [
            f"evaluation over {self.images} image(s), IoU threshold {self.iou_threshold:.2f}",
            f"  mAP: {self.map_value:.4f} ({self.map_value * 100:.1f}%)",
        ]
        for cid in sorted(self.per_class_ap):
            lines.append(f"  class {cid}: AP {self.per_class_ap[cid]:.4f}")
        lines.append(f"  counts: TP {self.tp}  FP {self.fp}  FN {self.fn}")
        lines.append(self.summary_line())
        return "\n".join(lines)


def evaluate_detections(per_image: list[tuple[str, list[Detection], list[Detection]]],
                        iou_threshold: float = 0.5,
                        num_classes: int = 1) -> EvalReport:
    """Evaluates (image_id, predictions, ground_truths) triples for a split."""
    pooled: dict[int, list[MatchedPrediction]] = {c: [] for c in range(num_classes)}
    gt_totals = {c: 0 for c in range(num_classes)}
    tp = fp = 0
    for image_id, preds, gts in per_image:
        for gt in gts:
            gt_totals[gt.class_id] = gt_totals.get(gt.class_id, 0) + 1
        for m in match_detections(preds, gts, iou_threshold):
            m.image_id = image_id
            pooled.setdefault(m.class_id, []).append(m)
            tp += 1 if m.is_tp else 0
            fp += 0 if m.is_tp else 1
    per_class_ap = {}
    per_class_pr = {}
    for cid, labeled in pooled.items():
        per_class_ap[cid] = average_precision(labeled, gt_totals.get(cid, 0))
        per_class_pr[cid] = _pr_points(labeled, gt_totals.get(cid, 0))
    fn = sum(gt_totals.values()) - tp
    return EvalReport(
        iou_threshold=iou_threshold,
        per_class_ap=per_class_ap,
        map_value=mean_average_precision(per_class_ap),
        pr_points=per_class_pr.get(0, []),
        tp=tp, fp=fp, fn=fn,
        images=len(per_image),
        per_class_pr=per_class_pr,
    )


def _pr_points(labeled: list[MatchedPrediction], total_gt: int):
    if total_gt == 0:
        return []
    ranked = sorted(labeled, key=lambda m: -m.confidence)
    points, tp_cum = [], 0
    for i, m in enumerate(ranked):
        tp_cum += 1 if m.is_tp else 0
        points.append((tp_cum / total_gt, tp_cum / (i + 1)))
    return points


def append_epoch_map(path: str, epoch: int, map_value: float) -> None:
    """Upserts one (epoch, mAP) row in the two-column curve file, keyed and
    sorted by epoch so re-running an epoch overwrites its row."""
    if epoch < 1:
        raise ValueError("epoch must be >= 1")
    rows: dict[int, float] = {}
    if os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            for line in f:
                parts = line.split()
                if len(parts) == 2:
                    rows[int(parts[0])] = float(parts[1])
    rows[epoch] = map_value
    with open(path, "w", encoding="utf-8") as f:
        for ep in sorted(rows):
            f.write(f"{ep} {rows[ep]:.6f}\n")


def read_epoch_curve(path: str) -> list[tuple[int, float]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if len(parts) == 2:
                out.append((int(parts[0]), float(parts[1])))
    return out
