"""KITTI raw-layout index, calibration parsing and LIDAR ground truth.

Layout: ``root/<date>/calib_cam_to_cam.txt``, ``root/<date>/calib_velo_to_cam.txt``
and ``root/<date>/<drive>/image_02/data/<frame>.png`` (left) with the matching
``image_03`` (right) and ``velodyne_points/data/<frame>.bin`` files.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .core import CameraRig, MonoStereoError, StereoPair
from .imageio import load_image

SPLITS = ("train", "val", "test")
CAM_TO_CAM = "calib_cam_to_cam.txt"
VELO_TO_CAM = "calib_velo_to_cam.txt"


class CalibrationError(MonoStereoError, ValueError):
    pass


class SplitFileError(MonoStereoError, ValueError):
    pass


def read_calib_file(path) -> dict:
    """``key: numbers`` lines as float arrays; non-numeric values (dates) are skipped."""
    if not os.path.exists(path):
        raise CalibrationError(f"missing calibration file {path}")
    out = {}
    with open(path) as f:
        for line in f:
            key, sep, value = line.partition(":")
            if not sep:
                continue
            try:
                out[key.strip()] = np.array([float(v) for v in value.split()])
            except ValueError:
                continue
    return out


@dataclass(frozen=True)
class KittiCalib:
    p_rect_02: np.ndarray  # 3x4
    p_rect_03: np.ndarray  # 3x4
    r_rect_00: np.ndarray  # 3x3
    velo_to_cam: np.ndarray | None = None  # 3x4 [R | T]

    @property
    def focal(self) -> float:
        return float(self.p_rect_02[0, 0])

    @property
    def principal_point(self):
        return float(self.p_rect_02[0, 2]), float(self.p_rect_02[1, 2])

    @property
    def baseline(self) -> float:
        # the projection offsets are -f * (camera x position) in the rectified frame
        return float((self.p_rect_02[0, 3] - self.p_rect_03[0, 3]) / self.p_rect_02[0, 0])

    def rig(self) -> CameraRig:
        return CameraRig(self.baseline, self.focal)

    def velo_to_image(self) -> np.ndarray:
        """3x4 matrix taking homogeneous LIDAR points to homogeneous left-image pixels."""
        if self.velo_to_cam is None:
            raise CalibrationError("no LIDAR-to-camera calibration loaded")
        rect = np.eye(4)
        rect[:3, :3] = self.r_rect_00
        v2c = np.vstack([self.velo_to_cam, [0.0, 0.0, 0.0, 1.0]])
        return self.p_rect_02 @ rect @ v2c


def _need(table, key, size, path):
    if key not in table:
        raise CalibrationError(f"{path}: missing {key}")
    if table[key].size != size:
        raise CalibrationError(f"{path}: {key} has {table[key].size} values, expected {size}")
    return table[key]


def load_calibration(date_dir) -> KittiCalib:
    """Rectified projections from ``calib_cam_to_cam.txt``; LIDAR extrinsics if present."""
    path = os.path.join(date_dir, CAM_TO_CAM)
    cam = read_calib_file(path)
    p2 = _need(cam, "P_rect_02", 12, path).reshape(3, 4)
    p3 = _need(cam, "P_rect_03", 12, path).reshape(3, 4)
    r0 = _need(cam, "R_rect_00", 9, path).reshape(3, 3)
    velo = None
    vpath = os.path.join(date_dir, VELO_TO_CAM)
    if os.path.exists(vpath):
        v = read_calib_file(vpath)
        rot = _need(v, "R", 9, vpath).reshape(3, 3)
        t = _need(v, "T", 3, vpath).reshape(3, 1)
        velo = np.hstack([rot, t])
    return KittiCalib(p2, p3, r0, velo)


@dataclass(frozen=True)
class IndexEntry:
    left: str
    right: str
    rig: CameraRig

    @property
    def velodyne(self) -> str:
        drive = os.path.dirname(os.path.dirname(os.path.dirname(self.left)))
        frame = os.path.splitext(os.path.basename(self.left))[0]
        return os.path.join(drive, "velodyne_points", "data", frame + ".bin")

    @property
    def date_dir(self) -> str:
        return os.path.dirname(os.path.dirname(os.path.dirname(os.path.dirname(self.left))))


@dataclass(frozen=True)
class DatasetIndex:
    entries: tuple
    split: str = "test"

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> IndexEntry:
        return self.entries[i]

    def load_pair(self, i) -> StereoPair:
        e = self.entries[i]
        return StereoPair(load_image(e.left), load_image(e.right), e.rig)


def _right_of(left_rel):
    parts = left_rel.split("/")
    if "image_02" not in parts:
        raise SplitFileError(f"cannot derive the right view of {left_rel!r}: no image_02 component")
    parts[parts.index("image_02")] = "image_03"
    return "/".join(parts)


def load_kitti_index(root, split_file, split: str = "test") -> DatasetIndex:
    """Index the pairs listed in ``split_file``.

    Each non-blank line holds a left path (``.../image_02/...``) relative to
    ``root``, optionally followed by the right path; without one the right
    view is the matching ``image_03`` file.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    calibs, entries = {}, []
    with open(split_file) as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            left_rel = fields[0]
            right_rel = fields[1] if len(fields) > 1 else _right_of(left_rel)
            left, right = os.path.join(root, left_rel), os.path.join(root, right_rel)
            for p in (left, right):
                if not os.path.exists(p):
                    raise SplitFileError(f"{split_file}:{lineno}: missing file {p}")
            date = left_rel.split("/")[0]
            if date not in calibs:
                calibs[date] = load_calibration(os.path.join(root, date))
            entries.append(IndexEntry(left, right, calibs[date].rig()))
    if not entries:
        raise SplitFileError(f"{split_file}: no entries")
    return DatasetIndex(tuple(entries), split)


def read_velodyne(path) -> np.ndarray:
    """(N, 4) float32 records: x, y, z, reflectance."""
    return np.fromfile(path, dtype=np.float32).reshape(-1, 4)


def gt_depth_from_velodyne(points, calib: KittiCalib, dims) -> np.ndarray:
    """Project LIDAR points into the left image; the nearest point wins each pixel, unhit pixels are 0."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("empty point list")
    h, w = dims
    homo = np.hstack([pts[:, :3], np.ones((len(pts), 1))])
    proj = homo @ calib.velo_to_image().T
    z = proj[:, 2]
    front = z > 0
    u = np.round(proj[front, 0] / z[front]).astype(np.intp)
    v = np.round(proj[front, 1] / z[front]).astype(np.intp)
    z = z[front]
    keep = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    depth = np.full((h, w), np.inf)
    np.minimum.at(depth, (v[keep], u[keep]), z[keep])
    depth[np.isinf(depth)] = 0.0
    return depth
