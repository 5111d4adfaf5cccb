"""Training loop: Adam with a cosine-decayed learning rate, seeded shuffling
and augmentation, per-epoch evaluation hooks, and latest/best checkpointing.

Training is fully deterministic: (seed, data, config) fixes the final
checkpoint bit-for-bit on one machine.  There is no early stopping; the loop
always runs every epoch unless a step cap or non-finite loss intervenes.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .dataset import AnnotatedImage
from .evaluation import append_epoch_map
from .head import LossBreakdown, assign_targets, detection_loss
from .infer import evaluate_split
from .layers import Param
from .model import Detector
from .ops import NonFiniteError
from .postprocess import NMSConfig
from .transforms import flip_horizontal, preprocess, random_crop

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 0.001
    lr_min: float = 0.0
    batch_size: int = 16
    epochs: int = 200
    beta1: float = 0.9          # momentum term of the optimizer
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0005
    seed: int = 0
    eval_every: int = 10
    augment_flip: bool = True
    augment_crop: bool = True
    max_steps: int = 0          # 0 = run all epochs uncapped
    eval_split: str = "val"
    eval_conf: float = 0.05
    eval_iou: float = 0.5
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """lr(e) = lr_min + (lr0 - lr_min) * (1 + cos(pi * e / (E-1))) / 2."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs == 1:
        return cfg.lr0
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (
        1.0 + math.cos(math.pi * epoch / (cfg.epochs - 1)))


class Adam:
    """Bias-corrected Adam with decoupled weight decay; skips (and counts)
    steps whose gradients are not finite."""

    def __init__(self, params: list[Param]):
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.step = 0
        self.skipped = 0

    def apply(self, params: list[Param], lr: float, cfg: TrainConfig) -> bool:
        for p in params:
            if not np.isfinite(np.sum(p.grad, dtype=np.float64)):
                self.skipped += 1
                log.warning("adam: non-finite gradient in %s, step skipped", p.name)
                return False
        self.step += 1
        bc1 = 1.0 - cfg.beta1 ** self.step
        bc2 = 1.0 - cfg.beta2 ** self.step
        for p, m, v in zip(params, self.m, self.v):
            if cfg.weight_decay:
                p.value -= np.float32(lr * cfg.weight_decay) * p.value
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * p.grad
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * np.square(p.grad)
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            p.value -= np.float32(lr) * update
        return True


def train_step(model: Detector, batch_x: np.ndarray,
               batch_gt: list[list], adam: Adam, lr: float,
               cfg: TrainConfig) -> LossBreakdown:
    """One forward/backward/update pass over an assembled batch."""
    grids = model.forward(batch_x)
    targets = assign_targets(batch_gt, model.grid_hw, model.config.head)
    breakdown, grid_grads = detection_loss(grids, targets, model.config.head)
    model.zero_grads()
    model.backward(grid_grads)
    adam.apply(model.params(), lr, cfg)
    return breakdown


@dataclass
class TrainResult:
    epochs_run: int
    steps: int
    losses: list[float]
    final_map: float
    best_map: float
    curve_path: str
    latest_path: str
    best_path: str
    aborted: bool = False
    eval_history: list[tuple[int, float]] = field(default_factory=list)


def train(model: Detector, splits: dict[str, list[AnnotatedImage]],
          cfg: TrainConfig, out_dir: str) -> TrainResult:
    train_items = splits.get("train", [])
    if not train_items:
        raise ValueError("training split is empty")
    eval_items = splits.get(cfg.eval_split) or train_items
    os.makedirs(out_dir, exist_ok=True)
    curve_path = os.path.join(out_dir, "epoch_curve.txt")
    latest_path = os.path.join(out_dir, "latest.ckpt")
    best_path = os.path.join(out_dir, "best.ckpt")
    if os.path.exists(curve_path):
        os.remove(curve_path)

    adam = Adam(model.params())
    target = model.config.backbone.input_resolution
    nms_cfg = NMSConfig(iou_threshold=cfg.nms_iou)
    losses: list[float] = []
    eval_history: list[tuple[int, float]] = []
    best_map = -1.0
    final_map = 0.0
    steps = 0
    epochs_run = 0
    aborted = False

    def _evaluate_and_checkpoint(epoch_1based: int) -> None:
        nonlocal best_map, final_map
        report = evaluate_split(model, eval_items, cfg.eval_conf, cfg.eval_iou,
                                nms_cfg, cfg.batch_size)
        final_map = report.map_value
        append_epoch_map(curve_path, epoch_1based, report.map_value)
        eval_history.append((epoch_1based, report.map_value))
        save_checkpoint(latest_path, model, adam)
        if report.map_value > best_map:
            best_map = report.map_value
            save_checkpoint(best_path, model, adam)
        log.info("epoch %d: mAP@%.2f %.4f", epoch_1based, cfg.eval_iou,
                 report.map_value)

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, epoch)))
        order = rng.permutation(len(train_items))
        stop = False
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            images, gts = [], []
            for i in idx:
                item = train_items[int(i)]
                if cfg.augment_flip and rng.random() < 0.5:
                    item = flip_horizontal(item)
                if cfg.augment_crop:
                    item = random_crop(item, rng)
                images.append(preprocess(item.pixels, target))
                gts.append(item.boxes)
            batch_x = np.stack(images)
            try:
                breakdown = train_step(model, batch_x, gts, adam, lr, cfg)
                diverged = not math.isfinite(breakdown.total)
            except NonFiniteError as exc:
                log.error("divergence: %s", exc)
                diverged = True
            if diverged:
                log.error("loss diverged (non-finite) at step %d; aborting with "
                          "last good checkpoint retained", steps + 1)
                aborted = True
                stop = True
                break
            losses.append(breakdown.total)
            steps += 1
            if cfg.max_steps and steps >= cfg.max_steps:
                stop = True
                break
        if aborted:
            break
        epochs_run = epoch + 1
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs or stop:
            _evaluate_and_checkpoint(epoch + 1)
        if stop:
            break

    if not aborted and not os.path.exists(latest_path):
        _evaluate_and_checkpoint(max(epochs_run, 1))
    return TrainResult(
        epochs_run=epochs_run, steps=steps, losses=losses, final_map=final_map,
        best_map=best_map, curve_path=curve_path, latest_path=latest_path,
        best_path=best_path, aborted=aborted, eval_history=eval_history)
