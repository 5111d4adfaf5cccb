"""Dense tensor kernels: every forward op the detector needs plus a matching
hand-written backward.

Conventions: feature maps are float32 numpy arrays in NHWC (batch, height,
width, channels) row-major layout.  Standard conv kernels are (kh, kw, cin,
cout); depthwise kernels are (kh, kw, c).  Forward ops are pure functions over
immutable inputs; each ``*_backward`` takes the saved forward inputs plus the
upstream gradient and returns gradients in input order.
"""

from __future__ import annotations

import numpy as np

FLOAT = np.float32


def _as_f32(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=FLOAT)


class NonFiniteError(ValueError):
    """NaN/Inf reached an op input (the usual symptom of divergence)."""


def require_finite(x: np.ndarray, name: str) -> None:
    """Reject NaN/Inf inputs with a named diagnostic."""
    # float64 sum is cheap and overflows only on non-finite float32 content
    if not np.isfinite(np.sum(x, dtype=np.float64)):
        raise NonFiniteError(f"{name} contains non-finite values")


def _require_rank4(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{name} must be rank-4 (N,H,W,C), got shape {x.shape}")


def conv_output_extent(extent: int, k: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - k) // stride + 1


def _pad_nhwc(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided sliding windows over a padded NHWC array -> (N,Ho,Wo,C,kh,kw)."""
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return v[:, ::stride, ::stride]


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray,
           stride: int = 1, padding: int = 0) -> np.ndarray:
    """Standard 2-D convolution (cross-correlation) with zero padding.

    Output shape is (N, (H+2p-kh)//s+1, (W+2p-kw)//s+1, cout); every output
    element is the dot product of the kernel with its receptive field plus
    the per-filter bias.
    """
    _require_rank4(x, "conv2d input")
    if w.ndim != 4:
        raise ValueError(f"conv2d kernel must be (kh,kw,cin,cout), got {w.shape}")
    kh, kw, cin, cout = w.shape
    n, h, wd, c = x.shape
    if cin != c:
        raise ValueError(
            f"conv2d channel mismatch: input shape {x.shape} vs kernel shape {w.shape}")
    ho = conv_output_extent(h, kh, stride, padding)
    wo = conv_output_extent(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(
            f"conv2d produces empty output for input {x.shape}, kernel {w.shape}, "
            f"stride {stride}, padding {padding}")
    require_finite(x, "conv2d input")
    w, b = _as_f32(w), _as_f32(b)
    xp = _pad_nhwc(_as_f32(x), padding)
    v = _windows(xp, kh, kw, stride)                      # (N,Ho,Wo,C,kh,kw)
    cols = v.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    y = cols @ w.reshape(kh * kw * cin, cout)
    y += b
    return y.reshape(n, ho, wo, cout)


def conv2d_backward(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                    gy: np.ndarray):
    """Gradients of conv2d w.r.t. (input, kernel, bias)."""
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    _, ho, wo, _ = gy.shape
    w, gy = _as_f32(w), _as_f32(gy)
    xp = _pad_nhwc(_as_f32(x), padding)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    wm = w.reshape(kh * kw * cin, cout)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
            gw[i, j] = np.tensordot(xs, gy, axes=([0, 1, 2], [0, 1, 2]))
            gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += \
                gy @ wm[(i * kw + j) * cin:(i * kw + j + 1) * cin].T
    gb = gy.sum(axis=(0, 1, 2))
    if padding:
        gx = gxp[:, padding:padding + h, padding:padding + wd, :]
    else:
        gx = gxp
    return gx, gw, gb


def depthwise_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                     stride: int = 1, padding: int = 1) -> np.ndarray:
    """Per-channel spatial convolution; channel k of the output depends only
    on channel k of the input."""
    _require_rank4(x, "depthwise input")
    if w.ndim != 3:
        raise ValueError(f"depthwise kernel must be (kh,kw,c), got {w.shape}")
    kh, kw, c = w.shape
    if c != x.shape[3]:
        raise ValueError(
            f"depthwise channel mismatch: input shape {x.shape} vs kernel shape {w.shape}")
    require_finite(x, "depthwise input")
    w, b = _as_f32(w), _as_f32(b)
    n, h, wd, _ = x.shape
    ho = conv_output_extent(h, kh, stride, padding)
    wo = conv_output_extent(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(
            f"depthwise produces empty output for input {x.shape}, kernel {w.shape}")
    xp = _pad_nhwc(_as_f32(x), padding)
    y = np.zeros((n, ho, wo, c), dtype=FLOAT)
    for i in range(kh):
        for j in range(kw):
            y += xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] * w[i, j]
    y += b
    return y


def depthwise_conv2d_backward(x: np.ndarray, w: np.ndarray, stride: int,
                              padding: int, gy: np.ndarray):
    kh, kw, c = w.shape
    n, h, wd, _ = x.shape
    _, ho, wo, _ = gy.shape
    w, gy = _as_f32(w), _as_f32(gy)
    xp = _pad_nhwc(_as_f32(x), padding)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
            gw[i, j] = np.sum(xs * gy, axis=(0, 1, 2))
            gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gy * w[i, j]
    gb = gy.sum(axis=(0, 1, 2))
    if padding:
        gx = gxp[:, padding:padding + h, padding:padding + wd, :]
    else:
        gx = gxp
    return gx, gw, gb


def pointwise_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1x1 convolution: a per-pixel channel mix.  Rejects non-1x1 kernels."""
    _require_rank4(x, "pointwise input")
    if w.ndim != 4 or w.shape[0] != 1 or w.shape[1] != 1:
        raise ValueError(f"pointwise kernel must be 1x1, got shape {w.shape}")
    if w.shape[2] != x.shape[3]:
        raise ValueError(
            f"pointwise channel mismatch: input shape {x.shape} vs kernel shape {w.shape}")
    require_finite(x, "pointwise input")
    w, b = _as_f32(w), _as_f32(b)
    y = _as_f32(x) @ w[0, 0]
    y += b
    return y


def pointwise_conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    w, gy = _as_f32(w), _as_f32(gy)
    gx = gy @ w[0, 0].T
    cin, cout = w.shape[2], w.shape[3]
    gw = np.tensordot(_as_f32(x), gy, axes=([0, 1, 2], [0, 1, 2])).reshape(1, 1, cin, cout)
    gb = gy.sum(axis=(0, 1, 2))
    return gx, gw.astype(FLOAT), gb


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0).astype(FLOAT, copy=False)


def relu_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return np.where(x > 0, gy, 0.0).astype(FLOAT, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign for overflow-free evaluation
    x = np.asarray(x)
    out = np.empty(x.shape, dtype=FLOAT)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Backward through sigmoid given its forward output y."""
    return (gy * y * (1.0 - y)).astype(FLOAT, copy=False)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Spatial mean per channel: (N,H,W,C) -> (N,1,1,C)."""
    _require_rank4(x, "global_avg_pool input")
    return x.mean(axis=(1, 2), keepdims=True, dtype=FLOAT)


def global_avg_pool_backward(x_shape, gy: np.ndarray) -> np.ndarray:
    """Distributes the upstream gradient as g/(H*W) to every spatial cell."""
    n, h, w, c = x_shape
    g = (gy / (h * w)).astype(FLOAT)
    return np.broadcast_to(g, x_shape).copy()


def fully_connected(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map y = W x + b; w is (out, in), x is (in,) or batched (N, in)."""
    x = np.asarray(x, dtype=FLOAT)
    if w.shape[1] != x.shape[-1]:
        raise ValueError(
            f"fully_connected mismatch: weights {w.shape} vs input {x.shape}")
    return x @ _as_f32(w).T + _as_f32(b)


def fully_connected_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    x = np.asarray(x, dtype=FLOAT)
    w, gy = _as_f32(w), _as_f32(gy)
    if x.ndim == 1:
        gw = np.outer(gy, x)
        gb = gy.copy()
    else:
        gw = gy.T @ x
        gb = gy.sum(axis=0)
    gx = gy @ w
    return gx, gw.astype(FLOAT), gb


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"elementwise add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def _resize_axis_coords(src: int, dst: int):
    """Aligned-corner source coordinates for one axis: i0, i1, fractional t."""
    if dst == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(dst) * ((src - 1) / (dst - 1))
    i0 = np.floor(pos).astype(np.int64)
    i0 = np.minimum(i0, src - 1)
    i1 = np.minimum(i0 + 1, src - 1)
    t = (pos - i0).astype(FLOAT)
    return i0, i1, t


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with corner alignment.

    Uses the lerp form a + t*(b-a), which preserves constant fields bit-exactly
    and is exact at aligned corner samples.
    """
    _require_rank4(x, "resize input")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target must be >= 1, got ({out_h}, {out_w})")
    x = _as_f32(x)
    r0, r1, tr = _resize_axis_coords(x.shape[1], out_h)
    c0, c1, tc = _resize_axis_coords(x.shape[2], out_w)
    rows = x[:, r0] + tr[None, :, None, None] * (x[:, r1] - x[:, r0])
    out = rows[:, :, c0] + tc[None, None, :, None] * (rows[:, :, c1] - rows[:, :, c0])
    return out.astype(FLOAT, copy=False)


def resize_bilinear_backward(x_shape, out_h: int, out_w: int,
                             gy: np.ndarray) -> np.ndarray:
    n, h, w, c = x_shape
    gy = _as_f32(gy)
    r0, r1, tr = _resize_axis_coords(h, out_h)
    c0, c1, tc = _resize_axis_coords(w, out_w)
    # undo the column lerp: scatter into full-width rows
    grows = np.zeros((n, out_h, w, c), dtype=FLOAT)
    np.add.at(grows, (slice(None), slice(None), c0), gy * (1.0 - tc)[None, None, :, None])
    np.add.at(grows, (slice(None), slice(None), c1), gy * tc[None, None, :, None])
    gx = np.zeros(x_shape, dtype=FLOAT)
    np.add.at(gx, (slice(None), r0), grows * (1.0 - tr)[None, :, None, None])
    np.add.at(gx, (slice(None), r1), grows * tr[None, :, None, None])
    return gx
