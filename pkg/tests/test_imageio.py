import numpy as np
import pytest
from PIL import Image

from monostereo.imageio import (CorruptHeaderError, ImageNotFoundError, ImageWriteError, UnsupportedFormatError,
                                load_depth_png, load_image, load_map, read_pfm, save_depth_png, save_image, write_pfm)


def test_8bit_full_scale_and_zero(tmp_path):
    p = tmp_path / "a.png"
    Image.fromarray(np.array([[0, 255]], dtype=np.uint8)).save(p)
    img = load_image(p)
    assert img.shape == (1, 2, 1)
    assert img[0, 0, 0] == 0.0 and img[0, 1, 0] == 1.0


def test_16bit_matches_independent_decoder(tmp_path):
    p = tmp_path / "b.png"
    raw = np.array([[32768, 1, 65535]], dtype=np.uint16)
    Image.fromarray(raw).save(p)
    ref = np.asarray(Image.open(p)).astype(np.float64) / 65535.0
    img = load_image(p)
    np.testing.assert_array_equal(img[:, :, 0], ref)
    assert img[0, 0, 0] == pytest.approx(0.50001, abs=1e-5)


def test_rgb_channel_order(tmp_path):
    p = tmp_path / "c.png"
    rgb = np.zeros((2, 2, 3), dtype=np.uint8)
    rgb[..., 0] = 255
    Image.fromarray(rgb).save(p)
    img = load_image(p)
    assert img.shape == (2, 2, 3)
    assert np.all(img[..., 0] == 1.0) and not img[..., 1:].any()


def test_saved_png_decodes_identically_with_pillow(tmp_path, rng):
    img = rng.random((5, 4, 3))
    p = tmp_path / "d.png"
    save_image(img, p)
    ref = np.asarray(Image.open(p)).astype(np.float64) / 255.0
    np.testing.assert_array_equal(load_image(p), ref)
    assert np.abs(ref - img).max() <= 0.5 / 255 + 1e-12


def test_constant_roundtrip_within_quantization(tmp_path):
    p = tmp_path / "e.png"
    save_image(np.full((3, 3, 3), 0.5), p)
    assert np.abs(load_image(p) - 0.5).max() <= 1 / 255


def test_16bit_save(tmp_path, rng):
    img = rng.random((3, 4))
    p = tmp_path / "f.png"
    save_image(img, p, bit_depth=16)
    assert np.asarray(Image.open(p)).dtype == np.uint16
    assert np.abs(load_image(p)[:, :, 0] - img).max() <= 0.5 / 65535 + 1e-12


@pytest.mark.parametrize("shape", [(4, 5), (4, 5, 3)])
def test_pfm_bit_exact(tmp_path, rng, shape):
    data = rng.normal(size=shape).astype(np.float32)
    p = tmp_path / "g.pfm"
    write_pfm(p, data)
    np.testing.assert_array_equal(read_pfm(p), data)


def test_pfm_as_image(tmp_path, rng):
    data = rng.random((3, 3, 3)).astype(np.float32)
    p = tmp_path / "h.pfm"
    save_image(data, p)
    np.testing.assert_array_equal(load_image(p), data.astype(np.float64))


def test_depth_png_kitti_convention(tmp_path):
    p = tmp_path / "depth.png"
    depth = np.array([[0.0, 1.0, 19.44]])
    save_depth_png(depth, p)
    raw = np.asarray(Image.open(p))
    np.testing.assert_array_equal(raw, [[0, 256, round(19.44 * 256)]])
    np.testing.assert_allclose(load_depth_png(p), depth, atol=0.5 / 256)
    np.testing.assert_array_equal(load_map(p), load_depth_png(p))


def test_distinct_errors(tmp_path):
    with pytest.raises(ImageNotFoundError):
        load_image(tmp_path / "missing.png")
    bad = tmp_path / "x.bmp"
    bad.write_bytes(b"BM" + bytes(30))
    with pytest.raises(UnsupportedFormatError):
        load_image(bad)
    trunc = tmp_path / "t.png"
    trunc.write_bytes(b"\x89PNG\r\n")
    with pytest.raises(CorruptHeaderError):
        load_image(trunc)
    pfm = tmp_path / "bad.pfm"
    pfm.write_bytes(b"PF\nnot dims\n-1.0\n")
    with pytest.raises(CorruptHeaderError):
        load_image(pfm)
    assert len({ImageNotFoundError, UnsupportedFormatError, CorruptHeaderError}) == 3


def test_unwritable_path(tmp_path):
    with pytest.raises(ImageWriteError):
        save_image(np.zeros((2, 2)), tmp_path / "nope" / "a.png")
    with pytest.raises(ImageWriteError):
        write_pfm(tmp_path / "nope" / "a.pfm", np.zeros((2, 2)))
