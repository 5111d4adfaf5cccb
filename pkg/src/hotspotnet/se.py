"""Squeeze-and-excitation channel attention.

Squeeze: global average pooling collapses each channel to a scalar.
Excitation: a two-layer bottleneck (reduce by ``reduction_ratio``, ReLU,
expand, sigmoid) turns those scalars into per-channel gates in (0, 1) that
rescale the input map.  With zero excitation weights every gate is exactly
sigmoid(0) = 0.5.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .layers import Dense, Layer


class SEBlock(Layer):
    def __init__(self, name: str, channels: int, reduction_ratio: int = 4,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if channels % reduction_ratio != 0:
            raise ValueError(
                f"channels ({channels}) must be divisible by reduction ratio "
                f"({reduction_ratio})")
        self.channels = channels
        self.reduction_ratio = reduction_ratio
        hidden = channels // reduction_ratio
        self.fc1 = Dense(f"{name}.fc1", channels, hidden, rng)
        self.fc2 = Dense(f"{name}.fc2", hidden, channels, rng)
        self._params = self.fc1.params() + self.fc2.params()
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise ValueError(
                f"SE block expects (N,H,W,{self.channels}), got shape {x.shape}")
        squeezed = ops.global_avg_pool(x)[:, 0, 0, :]       # (N, C)
        hidden_pre = self.fc1.forward(squeezed)
        hidden = ops.relu(hidden_pre)
        gate = ops.sigmoid(self.fc2.forward(hidden))        # (N, C), in (0,1)
        self._cache = (x, hidden_pre, gate)
        return x * gate[:, None, None, :]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("SEBlock.backward called without a recorded forward")
        x, hidden_pre, gate = self._cache
        self._cache = None
        gx = gy * gate[:, None, None, :]
        g_gate = np.sum(gy * x, axis=(1, 2))                # (N, C)
        g_fc2 = ops.sigmoid_backward(gate, g_gate)
        g_hidden = self.fc2.backward(g_fc2)
        g_squeezed = self.fc1.backward(ops.relu_backward(hidden_pre, g_hidden))
        gx += ops.global_avg_pool_backward(x.shape, g_squeezed[:, None, None, :])
        return gx.astype(np.float32, copy=False)
