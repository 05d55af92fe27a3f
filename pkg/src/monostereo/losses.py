"""Training losses with analytic gradients.

Each loss returns its value together with the gradient of that value with
respect to the predicted quantities (reconstructed images or disparities).
The total combines image alignment, edge-aware smoothness and left-right
consistency over every pyramid scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import StereoPair, check_same_shape, image_gradients, pyramid
from .filters import BOX3, filter2d, filter2d_adjoint, gaussian_kernel
from .sampler import WarpDirection, warp, warp_backward

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

CSV_HEADER_BASE = ["iteration", "total", "ia", "ss", "dc"]


class ScaleCountError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma_w: float = 0.1
    gamma_mix: float = 0.85
    sigma_g: float = 1.0
    scale_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    # "width": smoothness and consistency see disparity as a fraction of the
    # scale's width; "pixel": raw pixel units
    regularizer_units: str = "width"

    def __post_init__(self):
        if self.regularizer_units not in ("width", "pixel"):
            raise ValueError(f"regularizer_units must be 'width' or 'pixel', got {self.regularizer_units!r}")
        for name in ("alpha", "beta", "gamma_w", "gamma_mix", "sigma_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.gamma_mix > 1:
            raise ValueError("gamma_mix must be <= 1")
        if any(s < 0 for s in self.scale_weights):
            raise ValueError("scale weights must be >= 0")

    def scaled(self, c: float) -> "LossWeights":
        return replace(self, alpha=self.alpha * c, beta=self.beta * c, gamma_w=self.gamma_w * c)


@dataclass
class LossReport:
    total: float
    ia: float
    ss: float
    dc: float
    per_scale: list = field(default_factory=list)  # [(ia, ss, dc), ...]

    def csv_header(self) -> list[str]:
        cols = list(CSV_HEADER_BASE)
        for s in range(len(self.per_scale)):
            cols += [f"ia_s{s}", f"ss_s{s}", f"dc_s{s}"]
        return cols

    def csv_row(self, iteration: int) -> list[str]:
        vals = [self.total, self.ia, self.ss, self.dc]
        for terms in self.per_scale:
            vals.extend(terms)
        return [str(iteration)] + [repr(float(v)) for v in vals]


def _hwc(x):
    x = np.asarray(x, dtype=np.float64)
    return x[:, :, None] if x.ndim == 2 else x


def ssim_map(a, b):
    """Per-pixel SSIM over 3x3 box windows, plus the intermediates the gradient needs."""
    mu_a = filter2d(a, BOX3)
    mu_b = filter2d(b, BOX3)
    s_aa = filter2d(a * a, BOX3)
    s_bb = filter2d(b * b, BOX3)
    s_ab = filter2d(a * b, BOX3)
    var_a = s_aa - mu_a ** 2
    var_b = s_bb - mu_b ** 2
    cov = s_ab - mu_a * mu_b
    n1 = 2 * mu_a * mu_b + SSIM_C1
    n2 = 2 * cov + SSIM_C2
    d1 = mu_a ** 2 + mu_b ** 2 + SSIM_C1
    d2 = var_a + var_b + SSIM_C2
    ssim = n1 * n2 / (d1 * d2)
    return ssim, (mu_a, mu_b, n1, n2, d1, d2)


def ssim_loss(a, b):
    """Mean of ``clip((1 - SSIM) / 2, 0, 1)`` and its gradient with respect to ``a``."""
    a, b = _hwc(a), _hwc(b)
    check_same_shape(a, b, names=("a", "b"))
    ssim, (mu_a, mu_b, n1, n2, d1, d2) = ssim_map(a, b)
    per_px = (1.0 - ssim) / 2.0
    active = (per_px > 0.0) & (per_px < 1.0)
    value = float(np.clip(per_px, 0.0, 1.0).mean())

    # d value / d ssim, then through the box statistics
    g = np.where(active, -0.5 / ssim.size, 0.0)
    den = d1 * d2
    g_mu_a = g * ((2 * mu_b * n2 - 2 * mu_b * n1) / den - ssim * (2 * mu_a * d2 - 2 * mu_a * d1) / den)
    g_s_ab = g * (2 * n1 / den)
    g_s_aa = g * (-ssim * d1 / den)
    grad = (filter2d_adjoint(g_mu_a, BOX3)
            + b * filter2d_adjoint(g_s_ab, BOX3)
            + 2 * a * filter2d_adjoint(g_s_aa, BOX3))
    return value, grad


def smoothed_l1_loss(a, b, sigma_g: float = 1.0):
    """Mean of the Gaussian-blurred absolute residual ``|a - b|``."""
    a, b = _hwc(a), _hwc(b)
    check_same_shape(a, b, names=("a", "b"))
    k = gaussian_kernel(sigma_g)
    r = a - b
    value = float(filter2d(np.abs(r), k).mean())
    g = filter2d_adjoint(np.full(r.shape, 1.0 / r.size), k)
    return value, np.sign(r) * g


def photometric_loss(target, recon, w: LossWeights):
    """``gamma_mix * SSIM term + (1 - gamma_mix) * smoothed L1`` and gradient w.r.t. ``recon``."""
    v_s, g_s = ssim_loss(recon, target) if w.gamma_mix > 0 else (0.0, 0.0)
    v_l, g_l = smoothed_l1_loss(recon, target, w.sigma_g) if w.gamma_mix < 1 else (0.0, 0.0)
    value = w.gamma_mix * v_s + (1.0 - w.gamma_mix) * v_l
    grad = w.gamma_mix * g_s + (1.0 - w.gamma_mix) * g_l
    return value, np.broadcast_to(grad, _hwc(recon).shape)


def image_alignment_loss(orig: StereoPair, recon_left, recon_right, w: LossWeights):
    """Mean of the left- and right-view photometric losses.

    Returns ``(value, (grad_recon_left, grad_recon_right))``.
    """
    check_same_shape(orig.left, _hwc(recon_left), orig.right, _hwc(recon_right),
                     names=("left", "recon_left", "right", "recon_right"))
    v_l, g_l = photometric_loss(orig.left, recon_left, w)
    v_r, g_r = photometric_loss(orig.right, recon_right, w)
    return 0.5 * (v_l + v_r), (0.5 * g_l, 0.5 * g_r)


def _smooth_one(disp, img, n):
    ix, iy = image_gradients(img)
    wx, wy = np.exp(-np.abs(ix)), np.exp(-np.abs(iy))
    dx, dy = image_gradients(disp)
    value = (np.abs(dx) * wx).sum() + (np.abs(dy) * wy).sum()
    gx = np.sign(dx) * wx / n
    gy = np.sign(dy) * wy / n
    grad = np.zeros_like(disp)
    grad[:, 1:] += gx[:, :-1]
    grad[:, :-1] -= gx[:, :-1]
    grad[1:, :] += gy[:-1, :]
    grad[:-1, :] -= gy[:-1, :]
    return value, grad


def smoothness_loss(disp_l, disp_r, left, right):
    """Edge-aware smoothness, summed over both views and divided by the pixel count."""
    disp_l = np.asarray(disp_l, dtype=np.float64)
    disp_r = np.asarray(disp_r, dtype=np.float64)
    left, right = _hwc(left), _hwc(right)
    check_same_shape(disp_l, left[:, :, 0], names=("disp_l", "left"))
    check_same_shape(disp_r, right[:, :, 0], names=("disp_r", "right"))
    n = disp_l.size
    v_l, g_l = _smooth_one(disp_l, left, n)
    v_r, g_r = _smooth_one(disp_r, right, n)
    return float((v_l + v_r) / n), g_l, g_r


def lr_consistency_loss(disp_l, disp_r, shared_warp_sign: bool = False):
    """Left-right disparity consistency.

    Each map is compared with the opposite map sampled at its own
    correspondence (left pixel j sees the right map at ``j - d_l``, right
    pixel j sees the left map at ``j + d_r``). Gradients flow through both
    the sampled values and the sample positions.
    """
    dl = np.asarray(disp_l, dtype=np.float64)
    dr = np.asarray(disp_r, dtype=np.float64)
    check_same_shape(dl, dr, names=("disp_l", "disp_r"))
    n = dl.size
    left_dir, right_dir = WarpDirection.RECONSTRUCT_LEFT, WarpDirection.RECONSTRUCT_RIGHT

    r_at_l = warp(dr, dl, left_dir, shared_warp_sign)
    l_at_r = warp(dl, dr, right_dir, shared_warp_sign)
    res_l = dl - r_at_l
    res_r = dr - l_at_r
    value = float((np.abs(res_l).sum() + np.abs(res_r).sum()) / n)

    up_l = np.sign(res_l) / n
    up_r = np.sign(res_r) / n
    g_dr_src, g_dl_pos = warp_backward(dr, dl, left_dir, -up_l, shared_warp_sign)
    g_dl_src, g_dr_pos = warp_backward(dl, dr, right_dir, -up_r, shared_warp_sign)
    grad_l = up_l + g_dl_pos + g_dl_src
    grad_r = up_r + g_dr_pos + g_dr_src
    return value, grad_l, grad_r


def reconstruct_views(left, right, disp_l, disp_r, shared_warp_sign: bool = False):
    """Rebuild the left view from the right with ``disp_l`` and the right view from the left with ``disp_r``."""
    recon_left = warp(right, disp_l, WarpDirection.RECONSTRUCT_LEFT, shared_warp_sign)
    recon_right = warp(left, disp_r, WarpDirection.RECONSTRUCT_RIGHT, shared_warp_sign)
    return recon_left, recon_right


def scale_loss(disp_l, disp_r, left, right, w: LossWeights, shared_warp_sign: bool = False):
    """The three terms at one scale and their gradients w.r.t. both disparities."""
    pair = StereoPair(left, right)
    recon_left, recon_right = reconstruct_views(pair.left, pair.right, disp_l, disp_r, shared_warp_sign)
    ia, (g_rl, g_rr) = image_alignment_loss(pair, recon_left, recon_right, w)
    ss, gs_l, gs_r = smoothness_loss(disp_l, disp_r, pair.left, pair.right)
    dc, gd_l, gd_r = lr_consistency_loss(disp_l, disp_r, shared_warp_sign)
    if w.regularizer_units == "width":
        # both regularizers are 1-homogeneous in disparity, so normalizing by
        # the width just divides them (and their gradients) by it
        inv_w = 1.0 / np.shape(disp_l)[1]
        ss, gs_l, gs_r = ss * inv_w, gs_l * inv_w, gs_r * inv_w
        dc, gd_l, gd_r = dc * inv_w, gd_l * inv_w, gd_r * inv_w
    _, gia_l = warp_backward(pair.right, disp_l, WarpDirection.RECONSTRUCT_LEFT, g_rl, shared_warp_sign)
    _, gia_r = warp_backward(pair.left, disp_r, WarpDirection.RECONSTRUCT_RIGHT, g_rr, shared_warp_sign)
    grad_l = w.alpha * gia_l + w.beta * gs_l + w.gamma_w * gd_l
    grad_r = w.alpha * gia_r + w.beta * gs_r + w.gamma_w * gd_r
    return (ia, ss, dc), grad_l, grad_r


def total_loss(scales, pair: StereoPair, w: LossWeights, shared_warp_sign: bool = False, target_pyramid=None):
    """Weighted sum of all three terms over every scale.

    ``scales`` is a sequence of ``(disp_l, disp_r)`` from finest to coarsest.
    Returns ``(LossReport, [(grad_l, grad_r), ...])``.
    """
    n_scales = len(scales)
    if n_scales < 1 or n_scales > len(w.scale_weights):
        raise ScaleCountError(f"got {n_scales} scales, weights cover {len(w.scale_weights)}")
    if target_pyramid is None:
        target_pyramid = list(zip(pyramid(pair.left, n_scales), pyramid(pair.right, n_scales)))
    if len(target_pyramid) != n_scales:
        raise ScaleCountError(f"{n_scales} disparity scales but {len(target_pyramid)} image levels")

    per_scale, grads = [], []
    ia = ss = dc = 0.0
    for s, ((dl, dr), (left_s, right_s)) in enumerate(zip(scales, target_pyramid)):
        sw = w.scale_weights[s]
        terms, g_l, g_r = scale_loss(dl, dr, left_s, right_s, w, shared_warp_sign)
        per_scale.append(terms)
        ia += sw * terms[0]
        ss += sw * terms[1]
        dc += sw * terms[2]
        grads.append((sw * g_l, sw * g_r))
    total = w.alpha * ia + w.beta * ss + w.gamma_w * dc
    return LossReport(total, ia, ss, dc, per_scale), grads
