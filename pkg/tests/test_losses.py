import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monostereo.core import ShapeMismatchError, StereoPair, pyramid
from monostereo.losses import (SSIM_C1, LossWeights, ScaleCountError, image_alignment_loss, lr_consistency_loss,
                               photometric_loss, scale_loss, smoothed_l1_loss, smoothness_loss, ssim_loss, total_loss)
from monostereo.sampler import WarpDirection, kink_mask
from oracles import central_diff, rel_err, smoothness_loop, ssim_constants, warp_loop

L, R = WarpDirection.RECONSTRUCT_LEFT, WarpDirection.RECONSTRUCT_RIGHT


def lr_loop(dl, dr):
    return (np.abs(dl - warp_loop(dr, dl, -1)).sum() + np.abs(dr - warp_loop(dl, dr, 1)).sum()) / dl.size


class TestSSIM:
    def test_self_is_zero(self, rng):
        x = rng.random((6, 6, 3))
        assert ssim_loss(x, x)[0] == pytest.approx(0.0, abs=1e-15)

    def test_constants_closed_form(self):
        v, _ = ssim_loss(np.full((5, 5), 0.2), np.full((5, 5), 0.8))
        assert v == pytest.approx((1 - ssim_constants(0.2, 0.8)) / 2, rel=1e-12)
        assert v == pytest.approx((1 - (0.32 + SSIM_C1) / (0.68 + SSIM_C1)) / 2, rel=1e-12)

    def test_gradient(self, rng):
        a, b = rng.random((8, 8)), rng.random((8, 8))
        _, g = ssim_loss(a, b)
        num = central_diff(lambda x: ssim_loss(x, b)[0], a)
        assert rel_err(g[:, :, 0], num) < 1e-5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            ssim_loss(np.zeros((3, 3)), np.zeros((3, 4)))


class TestSmoothedL1:
    def test_identical(self, rng):
        x = rng.random((4, 4, 3))
        assert smoothed_l1_loss(x, x)[0] == 0.0

    @pytest.mark.parametrize("sigma", [0.0, 1.0, 3.0])
    def test_constant_offset(self, sigma, rng):
        b = rng.random((6, 7))
        assert smoothed_l1_loss(b + 0.25, b, sigma)[0] == pytest.approx(0.25, rel=1e-12)

    def test_gradient(self, rng):
        a, b = rng.random((8, 8)), rng.random((8, 8))
        ok = np.abs(a - b) > 1e-4
        _, g = smoothed_l1_loss(a, b)
        num = central_diff(lambda x: smoothed_l1_loss(x, b)[0], a, mask=ok)
        assert rel_err(g[:, :, 0], num, ok) < 1e-5


class TestImageAlignment:
    def setup_method(self):
        r = np.random.default_rng(3)
        self.pair = StereoPair(r.random((6, 8, 3)), r.random((6, 8, 3)))
        self.rl, self.rr = r.random((6, 8, 3)), r.random((6, 8, 3))

    def test_perfect(self):
        v, _ = image_alignment_loss(self.pair, self.pair.left, self.pair.right, LossWeights())
        assert v == pytest.approx(0.0, abs=1e-15)

    def test_mix_boundaries(self):
        p = self.pair
        v0, _ = image_alignment_loss(p, self.rl, self.rr, LossWeights(gamma_mix=0.0))
        assert v0 == (smoothed_l1_loss(self.rl, p.left)[0] + smoothed_l1_loss(self.rr, p.right)[0]) / 2
        v1, _ = image_alignment_loss(p, self.rl, self.rr, LossWeights(gamma_mix=1.0))
        assert v1 == (ssim_loss(self.rl, p.left)[0] + ssim_loss(self.rr, p.right)[0]) / 2

    def test_gradient(self):
        w = LossWeights()
        _, (gl, _) = image_alignment_loss(self.pair, self.rl, self.rr, w)
        ok = np.abs(self.rl - self.pair.left) > 1e-4
        num = central_diff(lambda x: image_alignment_loss(self.pair, x, self.rr, w)[0], self.rl, mask=ok)
        assert rel_err(gl, num, ok) < 1e-5

    def test_photometric_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            photometric_loss(np.zeros((3, 3, 3)), np.zeros((3, 4, 3)), LossWeights())


class TestSmoothness:
    def test_constant_disparity(self, rng):
        img = rng.random((5, 6, 3))
        assert smoothness_loss(np.full((5, 6), 2.0), np.full((5, 6), 3.0), img, img)[0] == 0.0

    def test_ramp_over_constant_image(self):
        h, w, a, b = 5, 7, 0.3, -0.2
        ii, jj = np.mgrid[:h, :w]
        img = np.full((h, w, 3), 0.5)
        v, _, _ = smoothness_loss(a * jj + b * ii, np.zeros((h, w)), img, img)
        assert v == pytest.approx(abs(a) * (w - 1) / w + abs(b) * (h - 1) / h, rel=1e-12)

    def test_loop_oracle(self, rng):
        dl, dr = rng.random((6, 6)) * 5, rng.random((6, 6)) * 5
        left, right = rng.random((6, 6, 3)), rng.random((6, 6, 3))
        assert smoothness_loss(dl, dr, left, right)[0] == pytest.approx(smoothness_loop(dl, dr, left, right),
                                                                         rel=1e-12, abs=1e-12)

    def test_gradient(self, rng):
        dl, dr = rng.random((5, 7)) * 5, rng.random((5, 7)) * 5
        left, right = rng.random((5, 7, 3)), rng.random((5, 7, 3))
        _, gl, gr = smoothness_loss(dl, dr, left, right)
        assert rel_err(gl, central_diff(lambda x: smoothness_loss(x, dr, left, right)[0], dl)) < 1e-5
        assert rel_err(gr, central_diff(lambda x: smoothness_loss(dl, x, left, right)[0], dr)) < 1e-5

    def test_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            smoothness_loss(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 4, 3)), np.zeros((3, 3, 3)))


class TestConsistency:
    def test_zero(self):
        assert lr_consistency_loss(np.zeros((4, 5)), np.zeros((4, 5)))[0] == 0.0

    def test_constant_maps(self):
        c = np.full((4, 9), 2.5)
        assert lr_consistency_loss(c, c)[0] == 0.0

    def test_loop_oracle(self, rng):
        dl, dr = rng.uniform(0, 4, (5, 9)), rng.uniform(0, 4, (5, 9))
        assert lr_consistency_loss(dl, dr)[0] == pytest.approx(lr_loop(dl, dr), rel=1e-12)

    def test_gradient(self, rng):
        dl, dr = rng.uniform(0.2, 3.5, (5, 9)), rng.uniform(0.2, 3.5, (5, 9))
        _, gl, gr = lr_consistency_loss(dl, dr)
        f = lambda a, b: lr_consistency_loss(a, b)[0]
        # steer clear of |.| kinks and of integer sample columns in either map
        h = 1e-5
        okl = ~kink_mask(dl, L) & ~kink_mask(dr, R)
        numl = central_diff(lambda x: f(x, dr), dl, h=h, mask=okl)
        numr = central_diff(lambda x: f(dl, x), dr, h=h, mask=okl)
        assert rel_err(gl, numl, okl) < 1e-5
        assert rel_err(gr, numr, okl) < 1e-5

    def test_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            lr_consistency_loss(np.zeros((3, 3)), np.zeros((3, 4)))


class TestWeights:
    def test_validation(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1)
        with pytest.raises(ValueError):
            LossWeights(gamma_mix=1.5)
        with pytest.raises(ValueError):
            LossWeights(regularizer_units="meters")

    def test_scaled(self):
        w = LossWeights().scaled(2.0)
        assert (w.alpha, w.beta, w.gamma_w, w.gamma_mix) == (2.0, 2.0, 0.2, 0.85)


def _instance(seed, shape=(4, 8), scales=2):
    r = np.random.default_rng(seed)
    pair = StereoPair(r.random(shape + (3,)), r.random(shape + (3,)))
    dims = [lvl.shape[:2] for lvl in pyramid(pair.left, scales)]
    disps = [(r.uniform(0.2, d[1] * 0.4, d), r.uniform(0.2, d[1] * 0.4, d)) for d in dims]
    return pair, disps


class TestTotal:
    def test_exact_match_is_zero(self):
        img = np.full((4, 8, 3), 0.5)
        pair = StereoPair(img, img)
        zero = [(np.zeros((4, 8)), np.zeros((4, 8))), (np.zeros((2, 4)), np.zeros((2, 4)))]
        rep, _ = total_loss(zero, pair, LossWeights())
        assert rep.total == pytest.approx(0.0, abs=1e-15)

    def test_weight_masking(self):
        pair, disps = _instance(1)
        rep, _ = total_loss(disps, pair, LossWeights(alpha=1, beta=0, gamma_w=0))
        assert rep.total == sum(t[0] for t in rep.per_scale)

    @pytest.mark.parametrize("units", ["width", "pixel"])
    def test_recomposition_oracle(self, units):
        pair, disps = _instance(2)
        w = LossWeights(regularizer_units=units)
        rep, _ = total_loss(disps, pair, w)
        expected = 0.0
        for (dl, dr), left, right in zip(disps, pyramid(pair.left, 2), pyramid(pair.right, 2)):
            ia = (photometric_loss(left, warp_loop(right, dl, -1), w)[0]
                  + photometric_loss(right, warp_loop(left, dr, 1), w)[0]) / 2
            norm = dl.shape[1] if units == "width" else 1.0
            ss = smoothness_loop(dl, dr, left, right) / norm
            dc = lr_loop(dl, dr) / norm
            expected += w.alpha * ia + w.beta * ss + w.gamma_w * dc
        assert rep.total == pytest.approx(expected, rel=1e-10)

    def test_report_identity(self):
        pair, disps = _instance(4)
        w = LossWeights(alpha=0.7, beta=1.3, gamma_w=0.4)
        rep, _ = total_loss(disps, pair, w)
        assert rep.total == pytest.approx(w.alpha * rep.ia + w.beta * rep.ss + w.gamma_w * rep.dc, rel=1e-12)
        assert rep.csv_header()[:5] == ["iteration", "total", "ia", "ss", "dc"]
        assert len(rep.csv_row(3)) == len(rep.csv_header())

    @pytest.mark.parametrize("units", ["width", "pixel"])
    def test_scale_gradient(self, units):
        pair, [(dl, dr)] = _instance(5, shape=(5, 7), scales=1)
        w = LossWeights(regularizer_units=units)
        _, gl, gr = scale_loss(dl, dr, pair.left, pair.right, w)
        f = lambda a, b: sum(c * t for c, t in zip((w.alpha, w.beta, w.gamma_w),
                                                   scale_loss(a, b, pair.left, pair.right, w)[0]))
        ok = ~kink_mask(dl, L) & ~kink_mask(dr, R)
        assert rel_err(gl, central_diff(lambda x: f(x, dr), dl, mask=ok), ok) < 1e-5
        assert rel_err(gr, central_diff(lambda x: f(dl, x), dr, mask=ok), ok) < 1e-5

    def test_scale_count(self):
        pair, disps = _instance(6)
        with pytest.raises(ScaleCountError):
            total_loss([], pair, LossWeights())
        with pytest.raises(ScaleCountError):
            total_loss(disps * 3, pair, LossWeights())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_losses_non_negative(seed):
    pair, disps = _instance(seed)
    rep, _ = total_loss(disps, pair, LossWeights())
    assert min(rep.ia, rep.ss, rep.dc) >= 0
    for t in rep.per_scale:
        assert min(t) >= 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 10.0))
def test_regularizers_positively_homogeneous(seed, c):
    r = np.random.default_rng(seed)
    dl, dr = r.uniform(0, 3, (4, 6)), r.uniform(0, 3, (4, 6))
    img = r.random((4, 6, 3))
    assert smoothness_loss(c * dl, c * dr, img, img)[0] == pytest.approx(c * smoothness_loss(dl, dr, img, img)[0],
                                                                         rel=1e-9, abs=1e-12)
