"""Raster types shared by every stage of the pipeline.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` holding float64
values in ``[0, 1]``; disparity and depth maps are ``(H, W)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MonoStereoError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(MonoStereoError, ValueError):
    pass


class ImageTooSmallError(MonoStereoError, ValueError):
    pass


@dataclass(frozen=True)
class CameraRig:
    """Rectified stereo rig: baseline in meters, focal length in pixels."""

    baseline_b: float
    focal_f: float

    def __post_init__(self):
        if not (self.baseline_b > 0 and np.isfinite(self.baseline_b)):
            raise ValueError(f"baseline must be > 0, got {self.baseline_b}")
        if not (self.focal_f > 0 and np.isfinite(self.focal_f)):
            raise ValueError(f"focal length must be > 0, got {self.focal_f}")

    @property
    def bf(self) -> float:
        return self.baseline_b * self.focal_f

    def scaled(self, factor: float) -> "CameraRig":
        """Rig seen by an image resized by ``factor`` (focal scales, baseline does not)."""
        return CameraRig(self.baseline_b, self.focal_f * factor)


# Nominal KITTI rig (2011_09_26 calibration), reused for synthetic scenes.
KITTI_RIG = CameraRig(0.54, 721.5377)


@dataclass(frozen=True)
class StereoPair:
    left: np.ndarray
    right: np.ndarray
    rig: CameraRig = KITTI_RIG

    def __post_init__(self):
        left = as_image(self.left)
        right = as_image(self.right)
        if left.shape != right.shape:
            raise ShapeMismatchError(f"left {left.shape} and right {right.shape} differ")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def shape(self):
        return self.left.shape


def as_image(img, copy: bool = False) -> np.ndarray:
    """Validate and return ``img`` as an ``(H, W, C)`` float64 array in [0, 1].

    2-D input gets a singleton channel axis.
    """
    arr = np.array(img, dtype=np.float64, copy=copy) if copy else np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3, 6):
        raise ShapeMismatchError(f"expected (H, W, C) with C in 1/3/6, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageTooSmallError(f"empty image {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"image values outside [0, 1]: [{arr.min()}, {arr.max()}]")
    return arr


def check_same_shape(*arrays, names=None):
    shapes = [np.shape(a) for a in arrays]
    if any(s != shapes[0] for s in shapes[1:]):
        label = ", ".join(names) if names else "inputs"
        raise ShapeMismatchError(f"shape mismatch between {label}: {shapes}")


def downsample2(img: np.ndarray) -> np.ndarray:
    """Halve both dimensions (ceil) with a 2x2 box average.

    An odd trailing row/column is edge-replicated before averaging.
    """
    h, w = img.shape[:2]
    pad_h, pad_w = h % 2, w % 2
    if pad_h or pad_w:
        widths = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (img.ndim - 2)
        img = np.pad(img, widths, mode="edge")
    # pairwise order keeps constant inputs exact and results within [min, max]
    return 0.25 * ((img[0::2, 0::2] + img[1::2, 0::2]) + (img[0::2, 1::2] + img[1::2, 1::2]))


def pyramid_shapes(height: int, width: int, levels: int):
    shapes = [(height, width)]
    for _ in range(levels - 1):
        h, w = shapes[-1]
        shapes.append(((h + 1) // 2, (w + 1) // 2))
    return shapes


def pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    """Dyadic pyramid; level 0 is ``img`` itself (not a copy)."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    h, w = img.shape[:2]
    need = 2 ** (levels - 1)
    if h < need or w < need:
        raise ImageTooSmallError(f"{h}x{w} image too small for {levels} pyramid levels")
    out = [img]
    for _ in range(levels - 1):
        out.append(downsample2(out[-1]))
    return out


def image_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along x and y, zero on the trailing border.

    Multi-channel input is averaged over channels, so both outputs are (H, W).
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    h, w = arr.shape
    if h < 2 or w < 2:
        raise ImageTooSmallError(f"gradients need at least 2x2, got {h}x{w}")
    dx = np.zeros_like(arr)
    dy = np.zeros_like(arr)
    dx[:, :-1] = arr[:, 1:] - arr[:, :-1]
    dy[:-1, :] = arr[1:, :] - arr[:-1, :]
    return dx, dy
