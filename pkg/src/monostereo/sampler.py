"""Horizontal linear warping between rectified views, and disparity/depth conversion.

Rows of a rectified pair are epipolar lines, so every sample is taken along
the same row: ``out(i, j) = source(i, j -/+ disp(i, j))`` with linear
interpolation between the two neighbouring columns and clamp-to-edge.
"""
from __future__ import annotations

import enum

import numpy as np

from .core import CameraRig, ShapeMismatchError

DISP_EPS = 1e-6


class WarpDirection(enum.Enum):
    # left view rebuilt from the right view: sample at j - d
    RECONSTRUCT_LEFT = "left"
    # right view rebuilt from the left view: sample at j + d
    RECONSTRUCT_RIGHT = "right"


def direction_sign(direction: WarpDirection, shared_warp_sign: bool = False) -> float:
    """Sign applied to the disparity when forming the sample column.

    With ``shared_warp_sign`` both reconstructions sample at ``j - d``.
    """
    if direction is WarpDirection.RECONSTRUCT_LEFT or shared_warp_sign:
        return -1.0
    return 1.0


def _as_hwc(source):
    src = np.asarray(source, dtype=np.float64)
    if src.ndim == 2:
        return src[:, :, None], True
    if src.ndim != 3:
        raise ShapeMismatchError(f"source must be (H, W) or (H, W, C), got {src.shape}")
    return src, False


def _coords(disp, width, sign):
    h = disp.shape[0]
    x = np.arange(width, dtype=np.float64)[None, :] + sign * disp
    inside = (x > 0.0) & (x < width - 1)
    x = np.clip(x, 0.0, width - 1)
    x0 = np.clip(np.floor(x), 0, max(width - 2, 0)).astype(np.intp)
    t = x - x0
    if width == 1:
        t = np.zeros_like(x)
    x1 = np.minimum(x0 + 1, width - 1)
    rows = np.broadcast_to(np.arange(h)[:, None], disp.shape)
    return rows, x0, x1, t, inside


def _check(src, disp):
    if disp.shape != src.shape[:2]:
        raise ShapeMismatchError(f"disparity {disp.shape} does not match source {src.shape[:2]}")
    if not np.all(np.isfinite(disp)):
        raise ValueError("disparity has non-finite entries")


def warp(source, disp, direction: WarpDirection, shared_warp_sign: bool = False) -> np.ndarray:
    src, squeeze = _as_hwc(source)
    disp = np.asarray(disp, dtype=np.float64)
    _check(src, disp)
    rows, x0, x1, t, _ = _coords(disp, src.shape[1], direction_sign(direction, shared_warp_sign))
    t = t[:, :, None]
    out = (1.0 - t) * src[rows, x0] + t * src[rows, x1]
    return out[:, :, 0] if squeeze else out


def warp_backward(source, disp, direction: WarpDirection, upstream, shared_warp_sign: bool = False):
    """Gradients of ``sum(upstream * warp(source, disp))``.

    Returns ``(grad_source, grad_disp)``. Samples whose column was clamped
    get zero disparity gradient.
    """
    src, squeeze = _as_hwc(source)
    disp = np.asarray(disp, dtype=np.float64)
    _check(src, disp)
    up = np.asarray(upstream, dtype=np.float64)
    if squeeze and up.ndim == 2:
        up = up[:, :, None]
    if up.shape != src.shape:
        raise ShapeMismatchError(f"upstream {up.shape} does not match output {src.shape}")
    h, w, c = src.shape
    sign = direction_sign(direction, shared_warp_sign)
    rows, x0, x1, t, inside = _coords(disp, w, sign)

    slope = src[rows, x1] - src[rows, x0]
    grad_disp = sign * np.where(inside, (up * slope).sum(axis=2), 0.0)

    flat0 = (rows * w + x0).ravel()
    flat1 = (rows * w + x1).ravel()
    tt = t.ravel()
    grad_src = np.empty_like(src)
    for ch in range(c):
        u = up[:, :, ch].ravel()
        g = np.bincount(flat0, weights=(1.0 - tt) * u, minlength=h * w)
        g += np.bincount(flat1, weights=tt * u, minlength=h * w)
        grad_src[:, :, ch] = g.reshape(h, w)
    if squeeze:
        grad_src = grad_src[:, :, 0]
    return grad_src, grad_disp


def kink_mask(disp, direction: WarpDirection, tol: float = 1e-4, shared_warp_sign: bool = False) -> np.ndarray:
    """Pixels whose sample column lies within ``tol`` of an integer or the clamp range.

    The warp is only piecewise smooth in the disparity; finite differences
    are meaningless at these pixels.
    """
    disp = np.asarray(disp, dtype=np.float64)
    w = disp.shape[1]
    x = np.arange(w)[None, :] + direction_sign(direction, shared_warp_sign) * disp
    frac = x - np.round(x)
    return (np.abs(frac) < tol) | (x < tol) | (x > w - 1 - tol)


def disparity_to_depth(disp, rig: CameraRig, eps: float = DISP_EPS) -> np.ndarray:
    """Depth ``b*f/d`` in meters; disparities at or below ``eps`` become the sentinel 0."""
    d = np.asarray(disp, dtype=np.float64)
    valid = d > eps
    return np.where(valid, rig.bf / np.where(valid, d, 1.0), 0.0)


def depth_to_disparity(depth, rig: CameraRig) -> np.ndarray:
    z = np.asarray(depth, dtype=np.float64)
    valid = z > 0
    return np.where(valid, rig.bf / np.where(valid, z, 1.0), 0.0)
