"""Shared test fixtures: float64 reference implementations (independent of
the library's vectorized float32 kernels) and a central finite-difference
harness used by the gradient checks."""

from __future__ import annotations

import numpy as np
import pytest

FD_STEP = 1e-3
REL_TOL = 1e-3
MAG_GATE = 1e-4


# --- float64 reference forwards (direct loop/einsum formulations) ---

def ref_conv2d(x, w, b, stride=1, padding=0):
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    n, h, wd, _ = x.shape
    kh, kw, cin, cout = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    y = np.zeros((n, ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw, :]
            y[:, i, j, :] = np.einsum("nijc,ijco->no", patch, w)
    return y + np.asarray(b, np.float64)


def ref_depthwise(x, w, b, stride=1, padding=1):
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    n, h, wd, c = x.shape
    kh, kw, _ = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    y = np.zeros((n, ho, wo, c))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw, :]
            y[:, i, j, :] = np.einsum("nijc,ijc->nc", patch, w)
    return y + np.asarray(b, np.float64)


def ref_pointwise(x, w, b):
    return np.asarray(x, np.float64) @ np.asarray(w, np.float64)[0, 0] \
        + np.asarray(b, np.float64)


def ref_fc(x, w, b):
    return np.asarray(x, np.float64) @ np.asarray(w, np.float64).T \
        + np.asarray(b, np.float64)


def ref_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, np.float64)))


def ref_se(x, w1, b1, w2, b2):
    x = np.asarray(x, np.float64)
    s = x.mean(axis=(1, 2))
    hidden = np.maximum(ref_fc(s, w1, b1), 0.0)
    gate = ref_sigmoid(ref_fc(hidden, w2, b2))
    return x * gate[:, None, None, :]


# --- finite differences ---

def fd_gradient(fn, arrays, which, step=FD_STEP):
    """Central-difference gradient of scalar fn(*arrays) w.r.t. arrays[which],
    evaluated in float64."""
    base = [np.asarray(a, np.float64).copy() for a in arrays]
    grad = np.zeros_like(base[which])
    for idx in np.ndindex(base[which].shape):
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[which][idx] += step
        minus[which][idx] -= step
        grad[idx] = (fn(*plus) - fn(*minus)) / (2 * step)
    return grad


def max_rel_err(analytic, numeric, gate=MAG_GATE):
    """Largest relative error over elements whose magnitude clears the gate."""
    analytic = np.asarray(analytic, np.float64)
    numeric = np.asarray(numeric, np.float64)
    worst = 0.0
    for idx in np.ndindex(analytic.shape):
        m = max(abs(analytic[idx]), abs(numeric[idx]))
        if m > gate:
            worst = max(worst, abs(analytic[idx] - numeric[idx]) / m)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
