import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from monostereo.core import (KITTI_RIG, CameraRig, ImageTooSmallError, ShapeMismatchError, StereoPair,
                             as_image, downsample2, image_gradients, pyramid, pyramid_shapes)

unit = st.floats(0.0, 1.0, allow_nan=False)


def images(max_side=12, channels=(1, 3)):
    return st.tuples(st.integers(2, max_side), st.integers(2, max_side), st.sampled_from(channels)).flatmap(
        lambda s: arrays(np.float64, s, elements=unit))


class TestCameraRig:
    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            CameraRig(0.0, 700.0)
        with pytest.raises(ValueError):
            CameraRig(0.5, -1.0)
        with pytest.raises(ValueError):
            CameraRig(float("nan"), 700.0)

    def test_bf_and_scaling(self):
        rig = CameraRig(0.5, 700.0)
        assert rig.bf == 350.0
        half = rig.scaled(0.5)
        assert half.focal_f == 350.0 and half.baseline_b == 0.5

    def test_kitti_rig(self):
        assert KITTI_RIG.baseline_b == 0.54


class TestImageValidation:
    def test_gray_gets_channel_axis(self):
        assert as_image(np.zeros((4, 5))).shape == (4, 5, 1)

    @pytest.mark.parametrize("bad", [np.full((2, 2, 3), 1.5), np.full((2, 2, 3), -0.1)])
    def test_range(self, bad):
        with pytest.raises(ValueError):
            as_image(bad)

    def test_non_finite(self):
        img = np.zeros((2, 2, 3))
        img[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            as_image(img)

    def test_channel_count(self):
        with pytest.raises(ShapeMismatchError):
            as_image(np.zeros((2, 2, 2)))

    def test_pair_dims_must_match(self):
        with pytest.raises(ShapeMismatchError):
            StereoPair(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestPyramid:
    def test_full_scale_dims(self):
        img = np.zeros((256, 512, 3))
        assert [lvl.shape[:2] for lvl in pyramid(img, 4)] == [(256, 512), (128, 256), (64, 128), (32, 64)]

    def test_constant_stays_constant(self):
        img = np.full((13, 22, 3), 0.37)
        for lvl in pyramid(img, 4):
            assert np.all(lvl == 0.37)

    def test_two_by_two_box_mean(self):
        img = np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None]
        assert pyramid(img, 2)[1].item() == 0.5

    def test_single_level_is_input(self):
        img = np.random.default_rng(0).random((5, 6, 3))
        assert pyramid(img, 1)[0] is img

    def test_odd_dims_ceil_with_edge_replication(self):
        img = np.arange(15, dtype=float).reshape(3, 5) / 14
        out = downsample2(img)
        assert out.shape == (2, 3)
        # bottom-right output sees the corner pixel replicated four times
        assert out[1, 2] == img[2, 4]
        assert out[0, 2] == pytest.approx((img[0, 4] + img[1, 4]) / 2)

    def test_shapes_helper(self):
        assert pyramid_shapes(5, 7, 3) == [(5, 7), (3, 4), (2, 2)]

    def test_too_small(self):
        with pytest.raises(ImageTooSmallError):
            pyramid(np.zeros((4, 16, 3)), 4)
        with pytest.raises(ValueError):
            pyramid(np.zeros((4, 4, 3)), 0)

    @settings(max_examples=60, deadline=None)
    @given(images(max_side=20))
    def test_levels_stay_within_input_range(self, img):
        levels = min(3, int(np.log2(min(img.shape[:2]))) + 1)
        for lvl in pyramid(img, levels):
            assert lvl.min() >= img.min() and lvl.max() <= img.max()


class TestImageGradients:
    def test_constant(self):
        dx, dy = image_gradients(np.full((4, 6, 3), 0.3))
        assert not dx.any() and not dy.any()

    def test_horizontal_ramp(self):
        w = 9
        img = np.tile(np.arange(w) / (w - 1), (4, 1))
        dx, dy = image_gradients(img)
        np.testing.assert_allclose(dx[:, :-1], 1 / (w - 1), rtol=1e-12)
        assert not dx[:, -1].any() and not dy.any()

    def test_matches_loop_oracle(self, rng):
        img = rng.random((4, 4, 3))
        gray = img.mean(axis=2)
        dx_o = np.zeros((4, 4))
        dy_o = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                if j < 3:
                    dx_o[i, j] = gray[i, j + 1] - gray[i, j]
                if i < 3:
                    dy_o[i, j] = gray[i + 1, j] - gray[i, j]
        dx, dy = image_gradients(img)
        np.testing.assert_array_equal(dx, dx_o)
        np.testing.assert_array_equal(dy, dy_o)

    def test_degenerate(self):
        with pytest.raises(ImageTooSmallError):
            image_gradients(np.zeros((1, 5)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 8), st.integers(2, 8), st.integers(0, 2 ** 31))
    def test_linearity(self, h, w, seed):
        # dyadic values keep every sum and difference exact in double precision
        r = np.random.default_rng(seed)
        a = r.integers(0, 256, (h, w)) / 256.0
        b = r.integers(0, 256, (h, w)) / 256.0
        ga, gb, gs = image_gradients(a), image_gradients(b), image_gradients(a + b)
        np.testing.assert_array_equal(gs[0], ga[0] + gb[0])
        np.testing.assert_array_equal(gs[1], ga[1] + gb[1])
