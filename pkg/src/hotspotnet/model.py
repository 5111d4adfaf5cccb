"""The full detector: backbone -> aggregation -> anchor-free heads, with a
stable parameter ordering for optimization and serialization, plus analytic
parameter/FLOP accounting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregationBlock
from .backbone import Backbone, BackboneConfig, SummaryRow
from .head import DetectionHeads, HeadConfig
from .layers import Param

# published reference figures for the architecture this desk-scale build
# follows, printed alongside analytic counts for comparison
REFERENCE_LINE = "paper: 36.10M params, 25.53 GFLOPs, 25.22 ms"


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    agg_channels: int = 256
    unified_resolution: tuple[int, int] | None = None  # default: deepest tap

    def resolved_unified(self) -> tuple[int, int]:
        if self.unified_resolution is not None:
            return self.unified_resolution
        return self.backbone.deep_resolution()


class Detector:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        bb_seed, agg_seed, head_seed = ss.spawn(3)
        self.backbone = Backbone(config.backbone, bb_seed)
        tap_channels = tuple(config.backbone.stage_widths[1:])
        self.aggregation = AggregationBlock(
            tap_channels, config.resolved_unified(), config.agg_channels,
            rng=np.random.default_rng(agg_seed))
        self.heads = DetectionHeads(config.agg_channels, config.head,
                                    rng=np.random.default_rng(head_seed))
        self._params = (self.backbone.params() + self.aggregation.params()
                        + self.heads.params())

    def params(self) -> list[Param]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self._params:
            p.grad[...] = 0.0

    @property
    def grid_hw(self) -> tuple[int, int]:
        return self.config.resolved_unified()

    def forward(self, x: np.ndarray) -> list[np.ndarray]:
        """Image batch (N,H,W,3) -> three raw head grids."""
        return self.heads.forward(self.aggregation.forward(self.backbone.forward(x)))

    def forward_full(self, x: np.ndarray):
        """Forward returning (features, unified map, grids) for inspection."""
        features = self.backbone.forward(x)
        f_agg = self.aggregation.forward(features)
        grids = self.heads.forward(f_agg)
        return features, f_agg, grids

    def backward(self, grid_grads: list[np.ndarray]) -> None:
        g_agg = self.heads.backward(grid_grads)
        g_shallow, g_inter, g_deep = self.aggregation.backward(g_agg)
        self.backbone.backward(g_shallow, g_inter, g_deep)

    def layer_table(self) -> list[SummaryRow]:
        return (self.backbone.layer_table() + self.aggregation.layer_table()
                + self.heads.layer_table(self.grid_hw))

    def total_params(self) -> int:
        return int(sum(p.value.size for p in self._params))

    def total_flops(self) -> int:
        return int(sum(row.flops for row in self.layer_table()))

    def checksum(self) -> float:
        """Order-stable float64 sum over all parameters (determinism probe)."""
        return float(sum(np.sum(p.value, dtype=np.float64) for p in self._params))


def format_summary(model: Detector) -> str:
    """Per-layer table with analytic parameter counts and FLOPs, totals, and
    the published reference line for comparison."""
    rows = model.layer_table()
    h, w = model.config.backbone.input_resolution
    lines = [
        f"model summary at input {h}x{w}x3 (seed {model.seed})",
        f"{'layer':<22} {'type':<16} {'output':<14} {'params':>10} {'flops':>14}",
    ]
    for r in rows:
        shape = f"{r.out_shape[0]}x{r.out_shape[1]}x{r.out_shape[2]}"
        lines.append(f"{r.name:<22} {r.kind:<16} {shape:<14} {r.params:>10} {r.flops:>14}")
    total_p = model.total_params()
    total_f = model.total_flops()
    lines.append(f"{'total':<22} {'':<16} {'':<14} {total_p:>10} {total_f:>14}")
    lines.append(f"analytic: {total_p / 1e6:.3f}M params, {total_f / 1e9:.3f} GFLOPs")
    lines.append(REFERENCE_LINE)
    return "\n".join(lines)
