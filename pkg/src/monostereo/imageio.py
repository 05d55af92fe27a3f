"""PNG (8/16-bit) and PFM reading and writing.

PNG pixels are normalized to [0, 1] on load. PFM holds raw float maps
(disparity, depth) and is read back bit-exactly.
"""
from __future__ import annotations

import os
import re

import cv2
import numpy as np

from .core import MonoStereoError

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class ImageIOError(MonoStereoError):
    pass


class ImageNotFoundError(ImageIOError, FileNotFoundError):
    pass


class UnsupportedFormatError(ImageIOError):
    pass


class CorruptHeaderError(ImageIOError):
    pass


class ImageWriteError(ImageIOError, OSError):
    pass


def _sniff(path) -> str:
    try:
        with open(path, "rb") as f:
            head = f.read(8)
    except FileNotFoundError:
        raise ImageNotFoundError(f"no such file: {path}") from None
    except IsADirectoryError:
        raise ImageNotFoundError(f"not a file: {path}") from None
    if head.startswith(PNG_MAGIC[:4]):
        if head != PNG_MAGIC:
            raise CorruptHeaderError(f"{path}: truncated PNG signature")
        return "png"
    if head[:2] in (b"PF", b"Pf"):
        return "pfm"
    raise UnsupportedFormatError(f"{path}: not a PNG or PFM file")


def read_pfm(path) -> np.ndarray:
    """Read a PFM file as float32, (H, W) for ``Pf`` or (H, W, 3) for ``PF``."""
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise CorruptHeaderError(f"{path}: bad PFM magic {header!r}")
        dims = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", f.readline())
        if not dims:
            raise CorruptHeaderError(f"{path}: malformed PFM dimensions")
        width, height = int(dims.group(1)), int(dims.group(2))
        try:
            scale = float(f.readline().strip())
        except ValueError:
            raise CorruptHeaderError(f"{path}: malformed PFM scale") from None
        if scale == 0 or width == 0 or height == 0:
            raise CorruptHeaderError(f"{path}: degenerate PFM header")
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        data = np.frombuffer(f.read(4 * count), dtype=dtype)
    if data.size != count:
        raise CorruptHeaderError(f"{path}: expected {count} floats, found {data.size}")
    shape = (height, width, 3) if channels == 3 else (height, width)
    # rows are stored bottom-to-top
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path, data) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {arr.shape}")
    height, width = arr.shape[:2]
    try:
        with open(path, "wb") as f:
            f.write(magic + b"\n")
            f.write(f"{width} {height}\n".encode())
            f.write(b"-1.0\n")
            f.write(np.ascontiguousarray(np.flipud(arr), dtype="<f4").tobytes())
    except OSError as exc:
        raise ImageWriteError(f"cannot write {path}: {exc}") from exc


def _read_png_raw(path) -> np.ndarray:
    raw = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise CorruptHeaderError(f"{path}: PNG could not be decoded")
    if raw.dtype not in (np.uint8, np.uint16):
        raise UnsupportedFormatError(f"{path}: unsupported PNG sample type {raw.dtype}")
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[:, :, :3]
        raw = raw[:, :, ::-1]  # BGR -> RGB
    return raw


def load_image(path) -> np.ndarray:
    """Load a PNG or PFM as an (H, W, C) float64 array.

    PNG values are scaled to [0, 1] by the bit depth. PFM values are taken
    as-is and must already lie in [0, 1].
    """
    kind = _sniff(path)
    if kind == "pfm":
        data = read_pfm(path).astype(np.float64)
        if data.min() < 0 or data.max() > 1:
            raise UnsupportedFormatError(f"{path}: PFM values outside [0, 1]; use read_pfm for raw maps")
    else:
        raw = _read_png_raw(path)
        data = raw.astype(np.float64) / float(np.iinfo(raw.dtype).max)
    if data.ndim == 2:
        data = data[:, :, None]
    return data


def save_image(img, path, bit_depth: int = 8) -> None:
    """Write ``img`` as PNG (8- or 16-bit, chosen by ``bit_depth``) or PFM by extension."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".pfm":
        write_pfm(path, arr)
        return
    if ext != ".png":
        raise UnsupportedFormatError(f"unsupported output extension {ext!r}")
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    scale = float(np.iinfo(dtype).max)
    q = np.round(np.clip(arr, 0.0, 1.0) * scale).astype(dtype)
    if q.ndim == 3:
        q = np.ascontiguousarray(q[:, :, ::-1])
    _write_png(path, q)


def _write_png(path, q):
    parent = os.path.dirname(os.path.abspath(os.fspath(path)))
    if not os.path.isdir(parent):
        raise ImageWriteError(f"cannot write {path}: directory does not exist")
    try:
        ok = cv2.imwrite(os.fspath(path), q)
    except cv2.error as exc:
        raise ImageWriteError(f"cannot write {path}: {exc}") from exc
    if not ok:
        raise ImageWriteError(f"cannot write {path}")


def save_depth_png(depth, path) -> None:
    """KITTI convention: uint16 = round(depth * 256), 0 marks missing."""
    d = np.asarray(depth, dtype=np.float64)
    q = np.round(np.clip(d, 0.0, 65535.0 / 256.0) * 256.0).astype(np.uint16)
    _write_png(path, q)


def load_depth_png(path) -> np.ndarray:
    if _sniff(path) != "png":
        raise UnsupportedFormatError(f"{path}: depth PNG expected")
    raw = _read_png_raw(path)
    if raw.dtype != np.uint16 or raw.ndim != 2:
        raise UnsupportedFormatError(f"{path}: depth PNG must be 16-bit grayscale")
    return raw.astype(np.float64) / 256.0


def load_map(path) -> np.ndarray:
    """Load a single-channel float map (disparity or depth) from PFM or KITTI depth PNG."""
    kind = _sniff(path)
    if kind == "pfm":
        data = read_pfm(path).astype(np.float64)
        if data.ndim == 3:
            raise UnsupportedFormatError(f"{path}: expected a single-channel map")
        return data
    return load_depth_png(path)
