"""Multi-scale feature aggregation.

The three backbone taps live at different resolutions and channel widths, so
element-wise fusion first aligns them: the shallow and intermediate maps are
bilinearly resized down to the unified resolution and all three are projected
to a common width with 1x1 convolutions.  The aligned maps are summed and a
final 1x1 convolution fuses the result (no activation afterwards).
"""

from __future__ import annotations

import numpy as np

from . import ops
from .backbone import BackboneFeatures, SummaryRow
from .layers import Layer, PointwiseConv2d


class AggregationBlock(Layer):
    def __init__(self, tap_channels: tuple[int, int, int],
                 unified_resolution: tuple[int, int],
                 out_channels: int = 256,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.unified_resolution = unified_resolution
        self.out_channels = out_channels
        self.tap_channels = tuple(tap_channels)
        self.laterals = [
            PointwiseConv2d(f"agg.lateral{i}", c, out_channels, rng=rng)
            for i, c in enumerate(tap_channels)
        ]
        self.fuse = PointwiseConv2d("agg.fuse", out_channels, out_channels, rng=rng)
        self._params = [p for l in self.laterals for p in l.params()] + self.fuse.params()
        self._tap_shapes = None

    def forward(self, features: BackboneFeatures) -> np.ndarray:
        taps = [features.shallow, features.intermediate, features.deep]
        for i, (tap, c) in enumerate(zip(taps, self.tap_channels)):
            if tap.shape[3] != c:
                raise ValueError(
                    f"aggregation tap {i} expects {c} channels, got shape {tap.shape}")
        uh, uw = self.unified_resolution
        self._tap_shapes = [t.shape for t in taps]
        acc = None
        for tap, lateral in zip(taps, self.laterals):
            if tap.shape[1:3] != (uh, uw):
                tap = ops.resize_bilinear(tap, uh, uw)
            projected = lateral.forward(tap)
            acc = projected if acc is None else acc + projected
        return self.fuse.forward(acc)

    def backward(self, gy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self._tap_shapes is None:
            raise RuntimeError("AggregationBlock.backward called without a recorded forward")
        shapes, self._tap_shapes = self._tap_shapes, None
        g_sum = self.fuse.backward(gy)
        grads = []
        uh, uw = self.unified_resolution
        for shape, lateral in zip(shapes, self.laterals):
            g = lateral.backward(g_sum)
            if shape[1:3] != (uh, uw):
                g = ops.resize_bilinear_backward(shape, uh, uw, g)
            grads.append(g)
        return grads[0], grads[1], grads[2]

    def layer_table(self) -> list[SummaryRow]:
        uh, uw = self.unified_resolution
        rows = []
        for i, (c, lat) in enumerate(zip(self.tap_channels, self.laterals)):
            rows.append(SummaryRow(
                f"agg.lateral{i}", "pointwise 1x1", (uh, uw, self.out_channels),
                c * self.out_channels + self.out_channels,
                2 * c * self.out_channels * uh * uw))
        rows.append(SummaryRow(
            "agg.fuse", "pointwise 1x1", (uh, uw, self.out_channels),
            self.out_channels * self.out_channels + self.out_channels,
            2 * self.out_channels * self.out_channels * uh * uw))
        return rows
