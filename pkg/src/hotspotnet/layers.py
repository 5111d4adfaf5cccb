"""Stateful layers: parameter storage + cached-forward/backward pairs.

Each layer records its forward inputs so ``backward`` can be called once with
the upstream gradient; calling backward without a recorded forward is an
error.  Parameter gradients accumulate into ``Param.grad`` until
``zero_grads``.  A gradient-tracking layer instance belongs to one logical
thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .ops import FLOAT


@dataclass
class Param:
    """A learnable tensor paired with its gradient accumulator."""
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=FLOAT)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ValueError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape}")


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Fan-in-scaled uniform init, suited to ReLU stacks."""
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(FLOAT)


class Layer:
    """Base: subclasses define _params (list of Param) and forward/backward."""

    def __init__(self):
        self._params: list[Param] = []
        self._x = None

    def params(self) -> list[Param]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self._params:
            p.grad[...] = 0.0

    def _take_cache(self):
        if self._x is None:
            raise RuntimeError(
                f"{type(self).__name__}.backward called without a recorded forward")
        x, self._x = self._x, None
        return x


class Conv2d(Layer):
    def __init__(self, name: str, kh: int, kw: int, cin: int, cout: int,
                 stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.stride, self.padding = stride, padding
        if rng is None:
            w = np.zeros((kh, kw, cin, cout), dtype=FLOAT)
        else:
            w = fan_in_uniform(rng, (kh, kw, cin, cout), kh * kw * cin)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.zeros(cout, dtype=FLOAT))
        self._params = [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return ops.conv2d(x, self.w.value, self.b.value, self.stride, self.padding)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x = self._take_cache()
        gx, gw, gb = ops.conv2d_backward(x, self.w.value, self.stride, self.padding, gy)
        self.w.grad += gw
        self.b.grad += gb
        return gx


class DepthwiseConv2d(Layer):
    def __init__(self, name: str, kh: int, kw: int, channels: int,
                 stride: int = 1, padding: int = 1,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.stride, self.padding = stride, padding
        if rng is None:
            w = np.zeros((kh, kw, channels), dtype=FLOAT)
        else:
            w = fan_in_uniform(rng, (kh, kw, channels), kh * kw)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.zeros(channels, dtype=FLOAT))
        self._params = [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return ops.depthwise_conv2d(x, self.w.value, self.b.value,
                                    self.stride, self.padding)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x = self._take_cache()
        gx, gw, gb = ops.depthwise_conv2d_backward(
            x, self.w.value, self.stride, self.padding, gy)
        self.w.grad += gw
        self.b.grad += gb
        return gx


class PointwiseConv2d(Layer):
    def __init__(self, name: str, cin: int, cout: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            w = np.zeros((1, 1, cin, cout), dtype=FLOAT)
        else:
            w = fan_in_uniform(rng, (1, 1, cin, cout), cin)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.zeros(cout, dtype=FLOAT))
        self._params = [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return ops.pointwise_conv2d(x, self.w.value, self.b.value)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x = self._take_cache()
        gx, gw, gb = ops.pointwise_conv2d_backward(x, self.w.value, gy)
        self.w.grad += gw
        self.b.grad += gb
        return gx


class Dense(Layer):
    """Fully connected layer over (N, in) batches."""

    def __init__(self, name: str, cin: int, cout: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            w = np.zeros((cout, cin), dtype=FLOAT)
        else:
            w = fan_in_uniform(rng, (cout, cin), cin)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.zeros(cout, dtype=FLOAT))
        self._params = [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return ops.fully_connected(x, self.w.value, self.b.value)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x = self._take_cache()
        gx, gw, gb = ops.fully_connected_backward(x, self.w.value, gy)
        self.w.grad += gw
        self.b.grad += gb
        return gx


class ChannelScale(Layer):
    """Per-channel learnable scale and shift (normalization-free stabilizer)."""

    def __init__(self, name: str, channels: int):
        super().__init__()
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=FLOAT))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=FLOAT))
        self._params = [self.gamma, self.beta]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x * self.gamma.value + self.beta.value

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x = self._take_cache()
        self.gamma.grad += np.sum(gy * x, axis=(0, 1, 2))
        self.beta.grad += np.sum(gy, axis=(0, 1, 2))
        return (gy * self.gamma.value).astype(FLOAT, copy=False)
