"""Anchor-free detection heads over the unified feature map.

Three heads (small / medium / large objects by normalized max side) each
predict a raw grid with channels [tx, ty, tw, th, t_conf, t_class...] per
cell.  Decoding maps cell (i, j) to a box

    x = (j + sigmoid(tx)) / Gw     y = (i + sigmoid(ty)) / Gh
    w = sigmoid(tw)                h = sigmoid(th)

and detection score p = sigmoid(t_conf) * sigmoid(t_class_c), so every decoded
quantity is bounded for finite raw values.

Training targets assign each ground-truth box to exactly one head (by its
max side against the head's size range) and to the single cell containing
its center; cell collisions keep the larger-area box.  The loss is

    total = box + class + conf

with box = mean(1 - IoU) over positive cells, class = mean binary
cross-entropy over positive cells' class channels, and conf = binary
cross-entropy over all cells (target 1 at positives, 0 elsewhere) with
negative cells down-weighted so they cannot swamp the handful of positives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import SummaryRow
from .layers import Conv2d, Layer
from .ops import FLOAT
from .postprocess import Detection

HEAD_NAMES = ("small", "medium", "large")


@dataclass
class HeadConfig:
    num_classes: int = 1
    size_ranges: tuple[tuple[float, float], ...] = ((0.0, 0.1), (0.1, 0.3), (0.3, 1.0))
    lambda_neg: float = 0.1

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if len(self.size_ranges) != len(HEAD_NAMES):
            raise ValueError(f"expected {len(HEAD_NAMES)} size ranges")
        lo = 0.0
        for rlo, rhi in self.size_ranges:
            if rlo != lo or rhi <= rlo:
                raise ValueError(
                    f"size_ranges must partition (0, 1] without overlap, got "
                    f"{self.size_ranges}")
            lo = rhi
        if lo != 1.0:
            raise ValueError("size_ranges must end at 1.0")

    @property
    def channels(self) -> int:
        return 5 + self.num_classes


def head_index_for_box(config: HeadConfig, w: float, h: float) -> int:
    """Which head owns a box, by its normalized max side."""
    side = max(w, h)
    for k, (lo, hi) in enumerate(config.size_ranges):
        if lo < side <= hi:
            return k
    raise ValueError(f"box max side {side} outside (0, 1]")


class DetectionHeads(Layer):
    """Three 3x3 convolution heads reading the same unified map.

    Head weights start at a tenth of the usual fan-in scale so raw grids open
    near zero, the benign decode point (centered boxes, gates at 0.5), which
    keeps early optimization away from sigmoid saturation.
    """

    INIT_SCALE = 0.1

    def __init__(self, in_channels: int, config: HeadConfig,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.config = config
        self.in_channels = in_channels
        self.heads = [
            Conv2d(f"head.{name}", 3, 3, in_channels, config.channels,
                   stride=1, padding=1, rng=rng)
            for name in HEAD_NAMES
        ]
        for h in self.heads:
            h.w.value *= np.float32(self.INIT_SCALE)
        self._params = [p for h in self.heads for p in h.params()]

    def forward(self, f_agg: np.ndarray) -> list[np.ndarray]:
        if f_agg.ndim != 4 or f_agg.shape[3] != self.in_channels:
            raise ValueError(
                f"heads expect (N,H,W,{self.in_channels}) input, got {f_agg.shape}")
        return [h.forward(f_agg) for h in self.heads]

    def backward(self, grid_grads: list[np.ndarray]) -> np.ndarray:
        g = None
        for h, gg in zip(self.heads, grid_grads):
            gh = h.backward(gg)
            g = gh if g is None else g + gh
        return g

    def layer_table(self, grid_hw: tuple[int, int]) -> list[SummaryRow]:
        gh, gw = grid_hw
        c = self.config.channels
        return [
            SummaryRow(f"head.{name}", "conv 3x3", (gh, gw, c),
                       3 * 3 * self.in_channels * c + c,
                       2 * 3 * 3 * self.in_channels * c * gh * gw)
            for name in HEAD_NAMES
        ]


def _sigmoid64(t: np.ndarray) -> np.ndarray:
    # float64 keeps gates strictly inside (0, 1) up to |t| ~ 37
    t = t.astype(np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    ex = np.exp(t[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def decode(grids: list[np.ndarray], config: HeadConfig,
           conf_threshold: float) -> list[list[Detection]]:
    """Turns raw head grids into per-image detection lists.

    Emits one candidate per (cell, class) with p >= conf_threshold, in a
    deterministic (head, class, row, col) order.
    """
    n = grids[0].shape[0]
    out: list[list[Detection]] = [[] for _ in range(n)]
    for grid in grids:
        _, gh, gw, _ = grid.shape
        s = _sigmoid64(grid)
        xs = (np.arange(gw, dtype=np.float64) + s[..., 0]) / gw
        ys = (np.arange(gh, dtype=np.float64)[:, None] + s[..., 1]) / gh
        conf = s[..., 4]
        for c in range(config.num_classes):
            p = conf * s[..., 5 + c]
            for img, ii, jj in zip(*np.nonzero(p >= conf_threshold)):
                out[img].append(Detection(
                    class_id=c,
                    confidence=float(p[img, ii, jj]),
                    cx=float(xs[img, ii, jj]),
                    cy=float(ys[img, ii, jj]),
                    w=float(s[img, ii, jj, 2]),
                    h=float(s[img, ii, jj, 3]),
                ))
    return out


@dataclass
class HeadTargets:
    """Per-head dense target grids for one batch."""
    pos: list[np.ndarray]    # bool (N, Gh, Gw)
    box: list[np.ndarray]    # float32 (N, Gh, Gw, 4) center-form, valid at pos
    cls: list[np.ndarray]    # int32 (N, Gh, Gw), valid at pos

    @property
    def positives(self) -> int:
        return int(sum(p.sum() for p in self.pos))


def assign_targets(batch_gt: list[list[Detection]], grid_hw: tuple[int, int],
                   config: HeadConfig) -> HeadTargets:
    """One (head, cell) positive per ground-truth box; the cell is the one
    containing the box center, the head the one whose size range covers the
    box's max side.  Cell collisions keep the larger-area box."""
    gh, gw = grid_hw
    n = len(batch_gt)
    pos = [np.zeros((n, gh, gw), dtype=bool) for _ in HEAD_NAMES]
    box = [np.zeros((n, gh, gw, 4), dtype=FLOAT) for _ in HEAD_NAMES]
    cls = [np.zeros((n, gh, gw), dtype=np.int32) for _ in HEAD_NAMES]
    for img, gts in enumerate(batch_gt):
        for gt in gts:
            if gt.w <= 0 or gt.h <= 0:
                raise ValueError(f"degenerate ground-truth box: w={gt.w} h={gt.h}")
            k = head_index_for_box(config, gt.w, gt.h)
            i = min(int(gt.cy * gh), gh - 1)
            j = min(int(gt.cx * gw), gw - 1)
            if pos[k][img, i, j]:
                incumbent = box[k][img, i, j]
                if gt.area() <= float(incumbent[2]) * float(incumbent[3]):
                    continue
            pos[k][img, i, j] = True
            box[k][img, i, j] = (gt.cx, gt.cy, gt.w, gt.h)
            cls[k][img, i, j] = gt.class_id
    return HeadTargets(pos, box, cls)


@dataclass
class LossBreakdown:
    total: float
    box: float
    cls: float
    conf: float
    positives: int


def _iou_and_grad(pred: np.ndarray, gt: np.ndarray):
    """IoU of center-form box rows plus d(IoU)/d(pred) per row.

    pred, gt: (M, 4) float64 arrays of (x, y, w, h).  At min/max ties the
    derivative is attributed to the predicted side.
    """
    px, py, pw, ph = pred[:, 0], pred[:, 1], pred[:, 2], pred[:, 3]
    gx, gy, gw_, gh_ = gt[:, 0], gt[:, 1], gt[:, 2], gt[:, 3]
    ax1, ax2 = px - pw / 2, px + pw / 2
    ay1, ay2 = py - ph / 2, py + ph / 2
    bx1, bx2 = gx - gw_ / 2, gx + gw_ / 2
    by1, by2 = gy - gh_ / 2, gy + gh_ / 2
    ix = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    iy = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    overlap = (ix > 0) & (iy > 0)
    ixc, iyc = np.maximum(ix, 0.0), np.maximum(iy, 0.0)
    inter = np.where(overlap, ixc * iyc, 0.0)
    area_p = pw * ph
    union = area_p + gw_ * gh_ - inter
    iou = inter / union

    # d(ix)/d corner: the active side of each max/min
    d_ax1 = np.where(ax1 >= bx1, -1.0, 0.0)
    d_ax2 = np.where(ax2 <= bx2, 1.0, 0.0)
    d_ay1 = np.where(ay1 >= by1, -1.0, 0.0)
    d_ay2 = np.where(ay2 <= by2, 1.0, 0.0)
    di_dx = np.where(overlap, iyc * (d_ax1 + d_ax2), 0.0)
    di_dw = np.where(overlap, iyc * (-0.5 * d_ax1 + 0.5 * d_ax2), 0.0)
    di_dy = np.where(overlap, ixc * (d_ay1 + d_ay2), 0.0)
    di_dh = np.where(overlap, ixc * (-0.5 * d_ay1 + 0.5 * d_ay2), 0.0)
    da_dw, da_dh = ph, pw

    u2 = union * union
    giou = np.empty_like(pred)
    giou[:, 0] = (di_dx * (union + inter)) / u2
    giou[:, 1] = (di_dy * (union + inter)) / u2
    giou[:, 2] = (di_dw * (union + inter) - inter * da_dw) / u2
    giou[:, 3] = (di_dh * (union + inter) - inter * da_dh) / u2
    return iou, giou


def _bce_from_logits(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    # stable elementwise max(t,0) - t*y + log(1 + exp(-|t|))
    return np.maximum(t, 0.0) - t * y + np.log1p(np.exp(-np.abs(t)))


def detection_loss(grids: list[np.ndarray], targets: HeadTargets,
                   config: HeadConfig):
    """Composite loss and its gradient w.r.t. each raw grid.

    Returns (LossBreakdown, [grad per head grid]).  With no positive cells the
    box and class terms are zero and only the confidence term remains.
    """
    n_pos = targets.positives
    total_cells = sum(g.shape[0] * g.shape[1] * g.shape[2] for g in grids)
    loss_box = 0.0
    loss_cls = 0.0
    loss_conf = 0.0
    grads = [np.zeros_like(g, dtype=FLOAT) for g in grids]

    for k, grid in enumerate(grids):
        _, gh, gw, _ = grid.shape
        t = grid.astype(np.float64)
        s = 1.0 / (1.0 + np.exp(-np.clip(t, -60, 60)))
        pos = targets.pos[k]

        # confidence: every cell, negatives down-weighted
        y_conf = pos.astype(np.float64)
        weight = np.where(pos, 1.0, config.lambda_neg)
        bce_conf = _bce_from_logits(t[..., 4], y_conf)
        loss_conf += float(np.sum(weight * bce_conf))
        grads[k][..., 4] = (weight * (s[..., 4] - y_conf) / total_cells).astype(FLOAT)

        if not pos.any():
            continue
        img, ri, cj = np.nonzero(pos)
        sp = s[img, ri, cj]                                  # (M, 5+C)
        gt_box = targets.box[k][img, ri, cj].astype(np.float64)
        gt_cls = targets.cls[k][img, ri, cj]

        # decoded boxes at positive cells
        px = (cj + sp[:, 0]) / gw
        py = (ri + sp[:, 1]) / gh
        pred = np.stack([px, py, sp[:, 2], sp[:, 3]], axis=1)
        iou, giou = _iou_and_grad(pred, gt_box)
        loss_box += float(np.sum(1.0 - iou))
        dsig = sp[:, :4] * (1.0 - sp[:, :4])
        scale = np.array([1.0 / gw, 1.0 / gh, 1.0, 1.0])
        g_box = (-giou * scale[None, :] * dsig)              # d(1-iou)/d raw
        grads[k][img, ri, cj, 0:4] += (g_box / max(n_pos, 1)).astype(FLOAT)

        # per-class BCE at positive cells
        y_cls = np.zeros((len(img), config.num_classes))
        y_cls[np.arange(len(img)), gt_cls] = 1.0
        t_cls = t[img, ri, cj, 5:]
        loss_cls += float(np.sum(_bce_from_logits(t_cls, y_cls)))
        grads[k][img, ri, cj, 5:] += (
            (sp[:, 5:] - y_cls) / (max(n_pos, 1) * config.num_classes)).astype(FLOAT)

    loss_conf /= total_cells
    if n_pos:
        loss_box /= n_pos
        loss_cls /= n_pos * config.num_classes
    breakdown = LossBreakdown(
        total=loss_box + loss_cls + loss_conf,
        box=loss_box, cls=loss_cls, conf=loss_conf, positives=n_pos)
    return breakdown, grads
