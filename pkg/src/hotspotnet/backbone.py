"""Feature-extractor backbone: a strided stem convolution followed by three
depthwise-separable blocks with channel attention, tapping shallow /
intermediate / deep feature maps at strides 2 / 4 / 8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .layers import ChannelScale, Conv2d, DepthwiseConv2d, Layer, PointwiseConv2d
from .se import SEBlock


@dataclass
class BackboneConfig:
    input_resolution: tuple[int, int] = (224, 224)
    stage_widths: tuple[int, ...] = (32, 64, 128, 256)
    stage_strides: tuple[int, ...] = (2, 1, 2, 2)
    se_reduction: int = 4

    def __post_init__(self):
        if len(self.stage_widths) != len(self.stage_strides):
            raise ValueError("stage_widths and stage_strides must have equal length")
        if any(w < 1 for w in self.stage_widths) or any(s < 1 for s in self.stage_strides):
            raise ValueError("stage widths and strides must be positive")
        total = self.total_stride()
        h, w = self.input_resolution
        if h % total or w % total:
            raise ValueError(
                f"input resolution {self.input_resolution} not divisible by the "
                f"cumulative stride {total}")

    def total_stride(self) -> int:
        total = 1
        for s in self.stage_strides:
            total *= s
        return total

    def deep_resolution(self) -> tuple[int, int]:
        total = self.total_stride()
        return self.input_resolution[0] // total, self.input_resolution[1] // total


@dataclass
class BackboneFeatures:
    """The three taps feeding multi-scale aggregation."""
    shallow: np.ndarray
    intermediate: np.ndarray
    deep: np.ndarray


@dataclass
class SummaryRow:
    name: str
    kind: str
    out_shape: tuple[int, int, int]  # (h, w, c)
    params: int
    flops: int  # per image, 2*k*k*cin*cout*ho*wo convention for convolutions


class SepConvBlock(Layer):
    """depthwise 3x3 -> pointwise 1x1 -> per-channel scale -> SE -> ReLU."""

    def __init__(self, name: str, cin: int, cout: int, stride: int,
                 se_reduction: int, rng: np.random.Generator):
        super().__init__()
        self.dw = DepthwiseConv2d(f"{name}.dw", 3, 3, cin, stride=stride,
                                  padding=1, rng=rng)
        self.pw = PointwiseConv2d(f"{name}.pw", cin, cout, rng=rng)
        self.scale = ChannelScale(f"{name}.scale", cout)
        self.se = SEBlock(f"{name}.se", cout, se_reduction, rng=rng)
        self._sub = [self.dw, self.pw, self.scale, self.se]
        self._params = [p for layer in self._sub for p in layer.params()]
        self._pre_relu = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = self.se.forward(self.scale.forward(self.pw.forward(self.dw.forward(x))))
        self._pre_relu = y
        return ops.relu(y)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._pre_relu is None:
            raise RuntimeError("SepConvBlock.backward called without a recorded forward")
        g = ops.relu_backward(self._pre_relu, gy)
        self._pre_relu = None
        g = self.se.backward(g)
        g = self.scale.backward(g)
        g = self.pw.backward(g)
        return self.dw.backward(g)


class Backbone(Layer):
    def __init__(self, config: BackboneConfig,
                 seed: int | np.random.SeedSequence = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        widths = config.stage_widths
        self.stem = Conv2d("backbone.stem", 3, 3, 3, widths[0],
                           stride=config.stage_strides[0], padding=1, rng=rng)
        self.blocks = [
            SepConvBlock(f"backbone.block{i}", widths[i - 1], widths[i],
                         config.stage_strides[i], config.se_reduction, rng)
            for i in range(1, len(widths))
        ]
        self._params = self.stem.params() + [
            p for blk in self.blocks for p in blk.params()]
        self._stem_pre = None

    def forward(self, image: np.ndarray) -> BackboneFeatures:
        h, w = self.config.input_resolution
        if image.ndim != 4 or image.shape[1:] != (h, w, 3):
            raise ValueError(
                f"backbone expects (N,{h},{w},3) input, got shape {image.shape}")
        y = self.stem.forward(image)
        self._stem_pre = y
        y = ops.relu(y)
        taps = []
        for blk in self.blocks:
            y = blk.forward(y)
            taps.append(y)
        return BackboneFeatures(*taps)

    def backward(self, g_shallow: np.ndarray, g_intermediate: np.ndarray,
                 g_deep: np.ndarray) -> np.ndarray:
        """Merges tap gradients (each tap also feeds the next block)."""
        if self._stem_pre is None:
            raise RuntimeError("Backbone.backward called without a recorded forward")
        tap_grads = [g_shallow, g_intermediate, g_deep]
        g = None
        for blk, gt in zip(reversed(self.blocks), reversed(tap_grads)):
            g = blk.backward(gt if g is None else g + gt)
        g = ops.relu_backward(self._stem_pre, g)
        self._stem_pre = None
        return self.stem.backward(g)

    def feature_shapes(self) -> list[tuple[int, int, int]]:
        """(h, w, c) of each tap at the configured input resolution."""
        h, w = self.config.input_resolution
        shapes = []
        stride_acc = self.config.stage_strides[0]
        for i in range(1, len(self.config.stage_widths)):
            stride_acc *= self.config.stage_strides[i]
            shapes.append((h // stride_acc, w // stride_acc,
                           self.config.stage_widths[i]))
        return shapes

    def layer_table(self) -> list[SummaryRow]:
        """Analytic per-layer output shapes, parameter counts, and FLOPs."""
        h, w = self.config.input_resolution
        widths = self.config.stage_widths
        strides = self.config.stage_strides
        rows = []
        ho, wo = h // strides[0], w // strides[0]
        rows.append(SummaryRow(
            "conv1", "conv 3x3", (ho, wo, widths[0]),
            3 * 3 * 3 * widths[0] + widths[0],
            2 * 3 * 3 * 3 * widths[0] * ho * wo))
        for i in range(1, len(widths)):
            cin, cout, s = widths[i - 1], widths[i], strides[i]
            ho, wo = ho // s, wo // s
            rows.append(SummaryRow(
                f"block{i}.depthwise", "depthwise 3x3", (ho, wo, cin),
                3 * 3 * cin + cin, 2 * 3 * 3 * cin * ho * wo))
            rows.append(SummaryRow(
                f"block{i}.pointwise", "pointwise 1x1", (ho, wo, cout),
                cin * cout + cout, 2 * cin * cout * ho * wo))
            rows.append(SummaryRow(
                f"block{i}.scale", "channel scale", (ho, wo, cout),
                2 * cout, 2 * cout * ho * wo))
            hidden = cout // self.config.se_reduction
            rows.append(SummaryRow(
                f"block{i}.se", "SE attention", (ho, wo, cout),
                (cout * hidden + hidden) + (hidden * cout + cout),
                ho * wo * cout + 2 * cout * hidden + 2 * hidden * cout + ho * wo * cout))
        return rows


def build_backbone(config: BackboneConfig, seed: int) -> Backbone:
    """Allocates and deterministically initializes all backbone parameters."""
    return Backbone(config, seed)
