"""Depth metrics, view-synthesis MAE and the monocular inference pipeline."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .core import CameraRig, MonoStereoError, as_image, check_same_shape
from .net import KIND_STEREO, forward
from .sampler import disparity_to_depth
from .train import _require_kind, stereo_input, synthesize_right

# evaluation caps in meters
CAP_EIGEN = (0.0, 80.0)
CAP_GARG = (1.0, 50.0)
CAPS = {"80": CAP_EIGEN, "50garg": CAP_GARG}
# smallest predicted depth allowed, keeps log finite under the 0-80 cap
MIN_PRED_DEPTH = 1e-3
DELTA = 1.25

# reference numbers from the full-scale KITTI experiments (not reproducible here)
REFERENCE_MAE_8BIT = {"ours": 3.02, "deep3d": 6.87}
REFERENCE_RMSE_CAP50 = {"sod": 5.346, "ood": 5.404, "ssd": 5.413}
REFERENCE_RMSE_SOD_CAP80 = 5.683

TABLE_COLUMNS = ("rmse", "rmse_log", "ard", "srd", "a1", "a2", "a3")


class NoValidPixelsError(MonoStereoError, ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    rmse_log: float
    ard: float
    srd: float
    a1: float
    a2: float
    a3: float
    valid_pixel_count: int
    cap: tuple

    def row(self):
        return [repr(float(getattr(self, c))) for c in TABLE_COLUMNS] + [
            str(self.valid_pixel_count), f"{self.cap[0]:g}-{self.cap[1]:g}"]


def parse_cap(cap) -> tuple:
    if isinstance(cap, str):
        if cap not in CAPS:
            raise ValueError(f"unknown cap {cap!r}; choose from {sorted(CAPS)}")
        return CAPS[cap]
    lo, hi = (float(v) for v in cap)
    if not lo < hi:
        raise ValueError(f"cap needs lo < hi, got ({lo}, {hi})")
    return lo, hi


def apply_cap(depth, lo: float, hi: float) -> np.ndarray:
    """Clamp valid (positive) depths into [lo, hi]; sentinel zeros stay zero."""
    if not lo < hi:
        raise ValueError(f"cap needs lo < hi, got ({lo}, {hi})")
    depth = np.asarray(depth, dtype=np.float64)
    return np.where(depth > 0, np.clip(depth, lo, hi), depth)


def crop(depth, rect):
    """``rect`` is (top, left, height, width); None leaves the map whole."""
    if rect is None:
        return depth
    top, left, h, w = rect
    return depth[top:top + h, left:left + w]


def compute_metrics(pred, gt, cap=CAP_EIGEN, log=np.log, crop_rect=None) -> MetricsReport:
    """Error and accuracy statistics over the pixels where ``gt`` is valid."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, names=("pred", "gt"))
    pred, gt = crop(pred, crop_rect), crop(gt, crop_rect)
    lo, hi = parse_cap(cap)
    valid = gt > 0
    n = int(valid.sum())
    if n == 0:
        raise NoValidPixelsError("ground truth has no valid pixels")
    z = np.clip(pred[valid], max(lo, MIN_PRED_DEPTH), hi)
    zg = gt[valid]
    ratio = np.maximum(z / zg, zg / z)
    return MetricsReport(
        rmse=float(np.sqrt(np.mean((z - zg) ** 2))),
        rmse_log=float(np.sqrt(np.mean((log(z) - log(zg)) ** 2))),
        ard=float(np.mean(np.abs(z - zg) / zg)),
        srd=float(np.mean((z - zg) ** 2 / zg)),
        a1=float(np.mean(ratio < DELTA)),
        a2=float(np.mean(ratio < DELTA ** 2)),
        a3=float(np.mean(ratio < DELTA ** 3)),
        valid_pixel_count=n,
        cap=(lo, hi),
    )


def aggregate(reports) -> MetricsReport:
    """Fixed-order average of per-image reports; pixel counts add up."""
    n = len(reports)
    if not n:
        raise ValueError("no reports to aggregate")
    vals = {c: sum(getattr(r, c) for r in reports) / n for c in TABLE_COLUMNS}
    return MetricsReport(**vals, valid_pixel_count=sum(r.valid_pixel_count for r in reports),
                         cap=reports[0].cap)


def mae(synth, orig, eight_bit: bool = False) -> float:
    synth = np.asarray(synth, dtype=np.float64)
    orig = np.asarray(orig, dtype=np.float64)
    check_same_shape(synth, orig, names=("synth", "orig"))
    value = float(np.abs(orig - synth).mean())
    return value * 255.0 if eight_bit else value


def infer_disparity(left, syn_ckpt, stereo_ckpt) -> np.ndarray:
    _require_kind(stereo_ckpt, KIND_STEREO)
    left = as_image(left)
    if left.shape[2] != 3:
        raise ValueError(f"left view must have 3 channels, got {left.shape[2]}")
    right = synthesize_right(syn_ckpt, left)
    out, _ = forward(stereo_ckpt, stereo_input(left, right))
    return out.pair(0)[0]


def infer_depth(left, syn_ckpt, stereo_ckpt, rig: CameraRig) -> np.ndarray:
    """Single left view to metric depth through both networks."""
    return disparity_to_depth(infer_disparity(left, syn_ckpt, stereo_ckpt), rig)


def constant_baseline(gt_maps) -> float:
    """Median of all valid ground-truth depths."""
    vals = np.concatenate([np.asarray(g, dtype=np.float64)[np.asarray(g) > 0] for g in gt_maps])
    if vals.size == 0:
        raise NoValidPixelsError("no valid ground-truth depth")
    return float(np.median(vals))


METRICS_HEADER = ["image", *TABLE_COLUMNS, "valid_pixel_count", "cap"]


def write_metrics_csv(path, names, reports) -> MetricsReport:
    """One row per image plus a final aggregate row; returns the aggregate."""
    agg = aggregate(reports)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for name, r in zip(names, reports):
            w.writerow([name, *r.row()])
        w.writerow(["mean", *agg.row()])
    return agg


def format_table(report: MetricsReport, label: str = "") -> str:
    heads = ("RMSE", "RMSE(log)", "ARD", "SRD", "d<1.25", "d<1.25^2", "d<1.25^3")
    vals = [getattr(report, c) for c in TABLE_COLUMNS]
    lo, hi = report.cap
    first = f"{'':<10}" if label == "" else f"{label:<10}"
    lines = [f"{'':<10}" + "".join(f"{h:>11}" for h in heads),
             first + "".join(f"{v:>11.4f}" for v in vals),
             f"cap {lo:g}-{hi:g} m, {report.valid_pixel_count} valid pixels"]
    return "\n".join(lines)


def report_dict(report: MetricsReport) -> dict:
    return asdict(report)
