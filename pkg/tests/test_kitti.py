import os

import numpy as np
import pytest

from conftest import KITTI_ROOT
from monostereo.kitti import (CalibrationError, KittiCalib, SplitFileError, gt_depth_from_velodyne,
                              load_calibration, load_kitti_index, read_velodyne)

DATE = os.path.join(KITTI_ROOT, "2011_09_26")
SPLIT = os.path.join(KITTI_ROOT, "test_files.txt")


def pinhole(f=100.0, cx=20.0, cy=10.0, tx=0.0):
    return np.array([[f, 0, cx, tx], [0, f, cy, 0], [0, 0, 1, 0]])


IDENTITY = KittiCalib(pinhole(), pinhole(tx=-50.0), np.eye(3), np.hstack([np.eye(3), np.zeros((3, 1))]))


def test_baseline_from_projection_offsets():
    cal = load_calibration(DATE)
    assert cal.baseline == pytest.approx((44.85728 + 339.5242) / 721.5377, rel=1e-12)
    assert cal.baseline == pytest.approx(0.54, abs=0.01)
    assert cal.focal == 721.5377
    assert cal.rig().baseline_b == cal.baseline


def test_index():
    idx = load_kitti_index(KITTI_ROOT, SPLIT)
    assert len(idx) == 3
    e = idx[1]
    assert "image_02" in e.left and "image_03" in e.right
    assert os.path.exists(e.velodyne)
    pair = idx.load_pair(0)
    assert pair.left.shape == pair.right.shape


def test_two_line_split(tmp_path):
    lines = open(SPLIT).read().splitlines()[:2]
    p = tmp_path / "split.txt"
    p.write_text("\n".join(lines) + "\n\n")
    assert len(load_kitti_index(KITTI_ROOT, p, split="val")) == 2


def test_missing_file_names_line(tmp_path):
    lines = open(SPLIT).read().splitlines()
    p = tmp_path / "split.txt"
    p.write_text(lines[0] + "\n" + lines[1].replace("0000000001", "0000000099") + "\n")
    with pytest.raises(SplitFileError, match=r"split.txt:2"):
        load_kitti_index(KITTI_ROOT, p)


def test_split_errors(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("# nothing\n")
    with pytest.raises(SplitFileError):
        load_kitti_index(KITTI_ROOT, p)
    with pytest.raises(ValueError):
        load_kitti_index(KITTI_ROOT, SPLIT, split="dev")


def test_missing_calibration(tmp_path):
    with pytest.raises(CalibrationError):
        load_calibration(tmp_path)
    (tmp_path / "calib_cam_to_cam.txt").write_text("P_rect_02: 1 2 3\n")
    with pytest.raises(CalibrationError, match="P_rect_02"):
        load_calibration(tmp_path)


def test_point_on_axis():
    d = gt_depth_from_velodyne(np.array([[0.0, 0.0, 10.0, 1.0]]), IDENTITY, (20, 40))
    assert d[10, 20] == 10.0
    assert np.count_nonzero(d) == 1


def test_nearest_wins():
    pts = np.array([[0.0, 0.0, 9.0, 0], [0.0, 0.0, 5.0, 0], [0.0, 0.0, -3.0, 0]])
    d = gt_depth_from_velodyne(pts, IDENTITY, (20, 40))
    assert d[10, 20] == 5.0 and np.count_nonzero(d) == 1


def test_empty_points():
    with pytest.raises(ValueError):
        gt_depth_from_velodyne(np.zeros((0, 4)), IDENTITY, (20, 40))


def test_projection_oracle_on_fixture():
    cal = load_calibration(DATE)
    entry = load_kitti_index(KITTI_ROOT, SPLIT)[0]
    pts = read_velodyne(entry.velodyne)
    assert pts.shape[1] == 4 and pts.dtype == np.float32
    # the calibration describes full-resolution frames
    h, w = 375, 1242
    depth = gt_depth_from_velodyne(pts, cal, (h, w))
    # independent loop: LIDAR -> camera 0 -> rectified -> image 2
    oracle = np.zeros((h, w))
    for x, y, z, _ in pts.astype(np.float64):
        cam = cal.velo_to_cam[:, :3] @ [x, y, z] + cal.velo_to_cam[:, 3]
        rect = cal.r_rect_00 @ cam
        u, v, s = cal.p_rect_02 @ np.append(rect, 1.0)
        if s <= 0:
            continue
        c, r = int(np.round(u / s)), int(np.round(v / s))
        if 0 <= c < w and 0 <= r < h and (oracle[r, c] == 0 or s < oracle[r, c]):
            oracle[r, c] = s
    np.testing.assert_allclose(depth, oracle, atol=1e-6)
    assert np.count_nonzero(depth) > 0
