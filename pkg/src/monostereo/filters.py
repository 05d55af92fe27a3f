"""Separable edge-padded linear filters and their adjoints.

Every filter here is linear, so its gradient is the adjoint (transpose)
applied to the upstream gradient; both are provided.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import ndimage

# axes up to this length use a cached dense operator; per-call overhead dominates there
DENSE_MAX = 32


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian truncated at 3 sigma; ``sigma <= 0`` gives the identity."""
    if sigma <= 0:
        return np.ones(1)
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


BOX3 = np.full(3, 1.0 / 3.0)


@lru_cache(maxsize=256)
def _dense(n: int, kernel_bytes: bytes) -> np.ndarray:
    """(n, n) matrix of edge-replicated correlation along one axis."""
    kernel = np.frombuffer(kernel_bytes)
    r = len(kernel) // 2
    m = np.zeros((n, n))
    rows = np.arange(n)
    for k, wk in enumerate(kernel):
        np.add.at(m, (rows, np.clip(rows + k - r, 0, n - 1)), wk)
    m.setflags(write=False)
    return m


def _apply_dense(m, x, axis):
    return np.moveaxis(np.tensordot(m, x, axes=([1], [axis])), 0, axis)


def correlate1d(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    if n <= DENSE_MAX:
        return _apply_dense(_dense(n, np.asarray(kernel, dtype=np.float64).tobytes()), x, axis)
    # scipy's "nearest" mode is edge replication
    return ndimage.correlate1d(x, kernel, axis=axis, mode="nearest")


def _along(axis, ndim, sl):
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def correlate1d_adjoint(g: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    g = np.asarray(g, dtype=np.float64)
    if r == 0:
        return kernel[0] * g
    n = g.shape[axis]
    if n <= DENSE_MAX:
        return _apply_dense(_dense(n, np.asarray(kernel, dtype=np.float64).tobytes()).T, g, axis)
    widths = [(0, 0)] * g.ndim
    widths[axis] = (r, r)
    # scatter onto the padded domain, then fold the replicated padding back onto the borders
    full = ndimage.convolve1d(np.pad(g, widths), kernel, axis=axis, mode="constant")
    out = full[_along(axis, g.ndim, slice(r, r + n))].copy()
    out[_along(axis, g.ndim, slice(0, 1))] += full[_along(axis, g.ndim, slice(0, r))].sum(axis=axis, keepdims=True)
    out[_along(axis, g.ndim, slice(n - 1, n))] += full[_along(axis, g.ndim, slice(r + n, None))].sum(
        axis=axis, keepdims=True)
    return out


def filter2d(x, kernel):
    """Apply the same 1-D kernel along rows and columns of an (H, W, ...) array."""
    return correlate1d(correlate1d(x, kernel, 0), kernel, 1)


def filter2d_adjoint(g, kernel):
    return correlate1d_adjoint(correlate1d_adjoint(g, kernel, 1), kernel, 0)
