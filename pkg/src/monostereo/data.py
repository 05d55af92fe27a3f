"""Synthetic rectified stereo scenes with exact ground-truth disparity.

A scene is a stack of fronto-parallel layers: a textured background and a
few textured rectangles in front of it, each at one integer disparity. The
right view is built by shifting every layer by its disparity, nearer layers
occluding farther ones, so the left view is reproduced exactly by warping
the right view with the ground truth on every visible pixel.

Farther layers are blended toward a uniform haze (aerial perspective),
which gives the single-view network a genuine monocular depth cue.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .core import CameraRig, KITTI_RIG, MonoStereoError, StereoPair
from .filters import filter2d, gaussian_kernel
from .imageio import load_image, load_map, save_image, write_pfm

TEXTURES = ("noise", "gradient", "checker")
# distant layers fade toward a pale sky colour, so brightness and tint carry depth
HAZE = np.array([0.80, 0.85, 0.95])
# KITTI images are 1242 px wide; synthetic rigs scale the focal length to the scene width
KITTI_WIDTH = 1242
NOISE_SIGMA = 4.0
GRADIENT_PERIOD = (16.0, 48.0)
CHECKER_PERIOD = (6, 14)


class InfeasibleSceneError(MonoStereoError, ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    width: int = 128
    height: int = 64
    object_count: int = 3
    disparity_range: tuple = (2.0, 14.0)
    texture: str = "noise"
    seed: int = 0
    # full-width strips over the lower half, nearer toward the bottom like a road
    ground_bands: int = 0

    def validate(self):
        lo, hi = self.disparity_range
        if self.width < 4 or self.height < 4:
            raise InfeasibleSceneError(f"scene {self.width}x{self.height} is too small")
        if self.texture not in TEXTURES:
            raise InfeasibleSceneError(f"unknown texture {self.texture!r}")
        if self.object_count < 0 or self.ground_bands < 0:
            raise InfeasibleSceneError("object_count and ground_bands must be >= 0")
        if self.ground_bands > self.height // 2:
            raise InfeasibleSceneError(f"{self.ground_bands} ground bands do not fit in {self.height // 2} rows")
        if lo < 0 or hi > 0.3 * self.width or lo > hi:
            raise InfeasibleSceneError(
                f"disparity range {self.disparity_range} not inside [0, {0.3 * self.width:g}]")
        if np.ceil(lo) > np.floor(hi):
            raise InfeasibleSceneError(f"disparity range {self.disparity_range} contains no integer")


# the desk-scale training scenes: KITTI-like ground strips below a far backdrop
DESK_SCENE = SceneSpec(ground_bands=4)


def synthetic_rig(width: int) -> CameraRig:
    return KITTI_RIG.scaled(width / KITTI_WIDTH)


def _texture(rng, kind, h, w):
    if kind == "noise":
        # smooth blobs: fine grain would make the SSIM basin narrower than the disparity spread
        tex = filter2d(rng.random((h, w, 3)), gaussian_kernel(NOISE_SIGMA))
    elif kind == "gradient":
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(*GRADIENT_PERIOD)
        yy, xx = np.mgrid[0:h, 0:w]
        phase = (xx * np.cos(theta) + yy * np.sin(theta)) / period
        tex = 0.5 + 0.5 * np.sin(2 * np.pi * phase)[:, :, None] * rng.uniform(0.5, 1.0, 3)
    else:
        period = int(rng.integers(*CHECKER_PERIOD))
        yy, xx = np.mgrid[0:h, 0:w]
        cells = ((yy // period + xx // period) % 2).astype(np.float64)
        colors = rng.random((2, 3))
        tex = colors[0] + (colors[1] - colors[0]) * cells[:, :, None]
    lo, hi = tex.min(), tex.max()
    return (tex - lo) / max(hi - lo, 1e-12)


def _haze(tex, disp, lo, hi):
    closeness = 1.0 if hi == lo else (disp - lo) / (hi - lo)
    contrast = 0.35 + 0.65 * closeness
    return HAZE + (tex - HAZE) * contrast


def _layers(spec: SceneSpec, rng):
    lo, hi = int(np.ceil(spec.disparity_range[0])), int(np.floor(spec.disparity_range[1]))
    h, w = spec.height, spec.width
    layers = [dict(x0=0, x1=w, y0=0, y1=h, disp=lo)]
    nb = spec.ground_bands
    edges = np.linspace(h // 2, h, nb + 1).round().astype(int)
    for k in range(nb):
        d = int(round(lo + (hi - lo) * (k + 1) / nb))
        layers.append(dict(x0=0, x1=w, y0=int(edges[k]), y1=int(edges[k + 1]), disp=d))
    for _ in range(spec.object_count):
        d = int(rng.integers(min(lo + 1, hi), hi + 1))
        ow = int(rng.integers(max(2, w // 8), max(3, w // 3) + 1))
        oh = int(rng.integers(max(2, h // 6), max(3, h // 2) + 1))
        x0 = int(rng.integers(0, w - ow + 1))
        y0 = int(rng.integers(0, h - oh + 1))
        layers.append(dict(x0=x0, x1=x0 + ow, y0=y0, y1=y0 + oh, disp=d))
    # painter's order: far (small disparity) first; ties keep draw order
    layers.sort(key=lambda L: L["disp"])
    canvas_w = w + hi + 1
    for L in layers:
        L["tex"] = _haze(_texture(rng, spec.texture, h, canvas_w), L["disp"], lo, hi)
    return layers


def _owner_maps(layers, h, w):
    """Index of the front-most layer per pixel, in left and right image coordinates."""
    cols = np.arange(w)
    own_l = np.zeros((h, w), dtype=np.intp)
    own_r = np.zeros((h, w), dtype=np.intp)
    for k, L in enumerate(layers):
        rows = slice(L["y0"], L["y1"])
        in_l = (cols >= L["x0"]) & (cols < L["x1"])
        in_r = (cols + L["disp"] >= L["x0"]) & (cols + L["disp"] < L["x1"])
        own_l[rows, in_l] = k
        own_r[rows, in_r] = k
    return own_l, own_r


def _render(spec: SceneSpec):
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    layers = _layers(spec, rng)
    own_l, own_r = _owner_maps(layers, h, w)
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    left = np.empty((h, w, 3))
    right = np.empty((h, w, 3))
    disp = np.empty((h, w))
    for k, L in enumerate(layers):
        m = own_l == k
        left[m] = L["tex"][np.broadcast_to(rows, (h, w))[m], np.broadcast_to(cols, (h, w))[m]]
        disp[m] = L["disp"]
        m = own_r == k
        right[m] = L["tex"][np.broadcast_to(rows, (h, w))[m], (np.broadcast_to(cols, (h, w)) + L["disp"])[m]]
    return left, right, disp, own_l, own_r


def gen_scene(spec: SceneSpec):
    """Return ``(left, right, gt_disp)`` for the scene described by ``spec``."""
    left, right, disp, _, _ = _render(spec)
    return left, right, disp


def visible_mask(spec: SceneSpec) -> np.ndarray:
    """Left pixels whose scene point is also seen (unoccluded, in frame) by the right camera."""
    _, _, disp, own_l, own_r = _render(spec)
    h, w = disp.shape
    xr = np.arange(w)[None, :] - disp.astype(np.intp)
    inside = xr >= 0
    rows = np.broadcast_to(np.arange(h)[:, None], (h, w))
    seen = np.zeros((h, w), dtype=bool)
    seen[inside] = own_r[rows[inside], xr[inside]] == own_l[inside]
    return seen


@dataclass
class Sample:
    pair: StereoPair
    gt_disp: np.ndarray

    @property
    def gt_depth(self):
        from .sampler import disparity_to_depth
        return disparity_to_depth(self.gt_disp, self.pair.rig)


def scene_spec_for(index: int, base: SceneSpec, seed: int, textures=TEXTURES) -> SceneSpec:
    return replace(base, texture=textures[index % len(textures)], seed=seed * 1_000_003 + index)


def make_synthetic_dataset(count: int, base: SceneSpec = SceneSpec(), seed: int = 0, textures=TEXTURES):
    """``count`` scenes whose seeds and textures are a pure function of (seed, index)."""
    rig = synthetic_rig(base.width)
    out = []
    for i in range(count):
        left, right, disp = gen_scene(scene_spec_for(i, base, seed, textures))
        out.append(Sample(StereoPair(left, right, rig), disp))
    return out


MANIFEST = "manifest.txt"


def save_dataset(samples, root) -> None:
    """Write PNG pairs, PFM ground truth and a manifest (one scene per line)."""
    for sub in ("left", "right", "disp"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    lines = ["# left right disp baseline_m focal_px"]
    for i, s in enumerate(samples):
        names = (f"left/{i:06d}.png", f"right/{i:06d}.png", f"disp/{i:06d}.pfm")
        save_image(s.pair.left, os.path.join(root, names[0]))
        save_image(s.pair.right, os.path.join(root, names[1]))
        write_pfm(os.path.join(root, names[2]), s.gt_disp)
        lines.append(f"{names[0]} {names[1]} {names[2]} {s.pair.rig.baseline_b!r} {s.pair.rig.focal_f!r}")
    with open(os.path.join(root, MANIFEST), "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(root):
    path = os.path.join(root, MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    samples = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            left = load_image(os.path.join(root, parts[0]))
            right = load_image(os.path.join(root, parts[1]))
            disp = load_map(os.path.join(root, parts[2]))
            rig = CameraRig(float(parts[3]), float(parts[4]))
            samples.append(Sample(StereoPair(left, right, rig), disp))
    if not samples:
        raise ValueError(f"{path}: empty dataset")
    return samples
