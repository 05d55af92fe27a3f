"""Central finite-difference checks of every analytic gradient.

Each check draws seeded random instances, compares the analytic gradient
with central differences entry by entry and reports the worst normwise
relative error. Disparity entries whose sample column sits on a kink of
the piecewise-linear interpolation (or at the clamp boundary) are skipped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import StereoPair, pyramid
from .losses import (LossWeights, image_alignment_loss, lr_consistency_loss, photometric_loss,
                     scale_loss, smoothed_l1_loss, smoothness_loss, ssim_loss, total_loss)
from .sampler import WarpDirection, kink_mask, warp, warp_backward

LOSS_TOL = 1e-5
WARP_TOL = 1e-6
STEP = 1e-6
KINK_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    op: str
    max_rel_error: float
    tolerance: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def numeric_grad(f, x, mask=None, h=STEP):
    """Central differences of scalar ``f`` at ``x``; entries outside ``mask`` are left at 0."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        if mask is not None and not mask[idx]:
            continue
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric, mask=None) -> float:
    """max |a - n| over the checked entries, relative to the larger of the two max norms."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if mask is not None:
        a, n = a[mask], n[mask]
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max())
    return 0.0 if scale == 0 else float(np.abs(a - n).max() / scale)


def _disp_mask(disp, direction, shared_warp_sign=False):
    return ~kink_mask(disp, direction, KINK_TOL, shared_warp_sign)


def _image(rng, shape):
    return rng.uniform(0.05, 0.95, shape)


def _disp(rng, shape):
    return rng.uniform(0.2, 0.4 * shape[1], shape)


def _spread(mask, c):
    return np.repeat(mask[:, :, None], c, axis=2)


# -- individual checks: each returns the worst relative error for one instance

def check_warp_source(rng, shape):
    h, w = shape
    src, disp = _image(rng, (h, w, 3)), _disp(rng, shape)
    up = rng.normal(size=(h, w, 3))
    worst = 0.0
    for d in WarpDirection:
        for lit in (False, True):
            g_src, _ = warp_backward(src, disp, d, up, lit)
            num = numeric_grad(lambda s: float((up * warp(s, disp, d, lit)).sum()), src)
            worst = max(worst, rel_error(g_src, num))
    return worst


def check_warp_disp(rng, shape):
    h, w = shape
    src, disp = _image(rng, (h, w, 3)), _disp(rng, shape)
    up = rng.normal(size=(h, w, 3))
    worst = 0.0
    for d in WarpDirection:
        for lit in (False, True):
            _, g_disp = warp_backward(src, disp, d, up, lit)
            m = _disp_mask(disp, d, lit)
            num = numeric_grad(lambda x: float((up * warp(src, x, d, lit)).sum()), disp, m)
            worst = max(worst, rel_error(g_disp, num, m))
    return worst


def check_ssim(rng, shape):
    a, b = _image(rng, (*shape, 3)), _image(rng, (*shape, 3))
    _, g = ssim_loss(a, b)
    return rel_error(g, numeric_grad(lambda x: ssim_loss(x, b)[0], a))


def check_smoothed_l1(rng, shape):
    a, b = _image(rng, (*shape, 3)), _image(rng, (*shape, 3))
    _, g = smoothed_l1_loss(a, b, 1.0)
    return rel_error(g, numeric_grad(lambda x: smoothed_l1_loss(x, b, 1.0)[0], a))


def check_photometric(rng, shape):
    w = LossWeights()
    t, r = _image(rng, (*shape, 3)), _image(rng, (*shape, 3))
    _, g = photometric_loss(t, r, w)
    return rel_error(g, numeric_grad(lambda x: photometric_loss(t, x, w)[0], r))


def check_image_alignment(rng, shape):
    w = LossWeights()
    pair = StereoPair(_image(rng, (*shape, 3)), _image(rng, (*shape, 3)))
    rl, rr = _image(rng, (*shape, 3)), _image(rng, (*shape, 3))
    _, (g_l, g_r) = image_alignment_loss(pair, rl, rr, w)
    n_l = numeric_grad(lambda x: image_alignment_loss(pair, x, rr, w)[0], rl)
    n_r = numeric_grad(lambda x: image_alignment_loss(pair, rl, x, w)[0], rr)
    return max(rel_error(g_l, n_l), rel_error(g_r, n_r))


def check_smoothness(rng, shape):
    left, right = _image(rng, (*shape, 3)), _image(rng, (*shape, 3))
    dl, dr = _disp(rng, shape), _disp(rng, shape)
    _, g_l, g_r = smoothness_loss(dl, dr, left, right)
    n_l = numeric_grad(lambda x: smoothness_loss(x, dr, left, right)[0], dl)
    n_r = numeric_grad(lambda x: smoothness_loss(dl, x, left, right)[0], dr)
    return max(rel_error(g_l, n_l), rel_error(g_r, n_r))


def check_lr_consistency(rng, shape):
    dl, dr = _disp(rng, shape), _disp(rng, shape)
    worst = 0.0
    for lit in (False, True):
        _, g_l, g_r = lr_consistency_loss(dl, dr, lit)
        m_l = _disp_mask(dl, WarpDirection.RECONSTRUCT_LEFT, lit)
        m_r = _disp_mask(dr, WarpDirection.RECONSTRUCT_RIGHT, lit)
        n_l = numeric_grad(lambda x: lr_consistency_loss(x, dr, lit)[0], dl, m_l)
        n_r = numeric_grad(lambda x: lr_consistency_loss(dl, x, lit)[0], dr, m_r)
        worst = max(worst, rel_error(g_l, n_l, m_l), rel_error(g_r, n_r, m_r))
    return worst


def _scale_value(w):
    return lambda dl, dr, left, right: float(np.dot([w.alpha, w.beta, w.gamma_w],
                                                    scale_loss(dl, dr, left, right, w)[0]))


def check_scale_loss(rng, shape):
    worst = 0.0
    left, right = _image(rng, (*shape, 3)), _image(rng, (*shape, 3))
    dl, dr = _disp(rng, shape), _disp(rng, shape)
    for units in ("width", "pixel"):
        w = LossWeights(regularizer_units=units)
        f = _scale_value(w)
        _, g_l, g_r = scale_loss(dl, dr, left, right, w)
        m_l = _disp_mask(dl, WarpDirection.RECONSTRUCT_LEFT)
        m_r = _disp_mask(dr, WarpDirection.RECONSTRUCT_RIGHT)
        n_l = numeric_grad(lambda x: f(x, dr, left, right), dl, m_l)
        n_r = numeric_grad(lambda x: f(dl, x, left, right), dr, m_r)
        worst = max(worst, rel_error(g_l, n_l, m_l), rel_error(g_r, n_r, m_r))
    return worst


def check_total_loss(rng, shape, n_scales=2):
    w = LossWeights()
    pair = StereoPair(_image(rng, (*shape, 3)), _image(rng, (*shape, 3)))
    shapes = [lvl.shape[:2] for lvl in pyramid(pair.left, n_scales)]
    scales = [(_disp(rng, s), _disp(rng, s)) for s in shapes]
    _, grads = total_loss(scales, pair, w)
    worst = 0.0
    for s in range(n_scales):
        for side, direction in ((0, WarpDirection.RECONSTRUCT_LEFT), (1, WarpDirection.RECONSTRUCT_RIGHT)):
            def f(x, s=s, side=side):
                trial = [list(p) for p in scales]
                trial[s][side] = x
                return total_loss(trial, pair, w)[0].total
            m = _disp_mask(scales[s][side], direction)
            num = numeric_grad(f, scales[s][side], m)
            worst = max(worst, rel_error(grads[s][side], num, m))
    return worst


CHECKS = {
    "warp_backward.source": (check_warp_source, WARP_TOL),
    "warp_backward.disp": (check_warp_disp, WARP_TOL),
    "ssim_loss": (check_ssim, LOSS_TOL),
    "smoothed_l1_loss": (check_smoothed_l1, LOSS_TOL),
    "photometric_loss": (check_photometric, LOSS_TOL),
    "image_alignment_loss": (check_image_alignment, LOSS_TOL),
    "smoothness_loss": (check_smoothness, LOSS_TOL),
    "lr_consistency_loss": (check_lr_consistency, LOSS_TOL),
    "scale_loss": (check_scale_loss, LOSS_TOL),
    "total_loss": (check_total_loss, LOSS_TOL),
}


def run_gradcheck(seed: int = 0, instances: int = 20, shape=(5, 7), ops=None) -> list[CheckResult]:
    """Run every check (or those named in ``ops``) on ``instances`` seeded random problems."""
    results = []
    for k, (name, (fn, tol)) in enumerate(CHECKS.items()):
        if ops is not None and name not in ops:
            continue
        worst = 0.0
        for i in range(instances):
            rng = np.random.default_rng([seed, k, i])
            worst = max(worst, fn(rng, shape))
        results.append(CheckResult(name, worst, tol, instances))
    return results
