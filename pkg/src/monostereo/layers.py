"""Forward/backward kernels for the network layers (NCHW, float64)."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d(x, w, b, stride=1):
    """Zero-padded 'same'-style convolution; output size is ceil(H / stride)."""
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(out), (x.shape, win, w, stride)


def conv2d_backward(dout, cache):
    x_shape, win, w, stride = cache
    k = w.shape[2]
    p = k // 2
    n, c, h, wd = x_shape
    ho, wo = dout.shape[2:]
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
    dwin = np.tensordot(dout, w, axes=([1], [0]))  # N, Ho, Wo, C, k, k
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dwin[..., i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, p:p + h, p:p + wd], dw, db


def elu(x):
    neg = np.expm1(np.minimum(x, 0.0))
    return np.where(x > 0, x, neg), (x, neg)


def elu_backward(dout, cache):
    x, neg = cache
    return dout * np.where(x > 0, 1.0, neg + 1.0)


def upsample2(x, shape):
    """Nearest-neighbour x2 upsampling cropped to the spatial ``shape``."""
    h, w = shape
    up = x.repeat(2, axis=2).repeat(2, axis=3)[:, :, :h, :w]
    return up, x.shape


def upsample2_backward(dout, x_shape):
    n, c, h, w = x_shape
    g = np.zeros((n, c, 2 * h, 2 * w))
    g[:, :, :dout.shape[2], :dout.shape[3]] = dout
    return g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))
