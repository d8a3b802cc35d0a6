import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from depthvision.core import (
    DepthMap, GrayImage, ImageRGB, ImageSigned, PointCloud, ValidationError, decode_png, encode_png,
    from_signed, load_depth, load_image, quantize8, read_dvim, save_depth, save_image, to_signed, write_dvim,
)

unit_images = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)),
                     elements=st.floats(0, 1, allow_nan=False))
signed_images = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)),
                       elements=st.floats(-1, 1, allow_nan=False))


@pytest.mark.parametrize("value,expected", [(0.0, -1.0), (1.0, 1.0), (0.5, 0.0)])
def test_to_signed_endpoints(value, expected):
    assert np.all(to_signed(ImageRGB.uniform(3, 4, value)).data == expected)


@pytest.mark.parametrize("value,expected", [(-1.0, 0.0), (1.0, 1.0)])
def test_from_signed_endpoints(value, expected):
    img = ImageSigned(np.full((2, 2, 3), value))
    assert np.all(from_signed(img).data == expected)


@given(unit_images)
def test_rgb_round_trip(a):
    back = from_signed(to_signed(ImageRGB(a))).data
    assert np.max(np.abs(back - a)) <= 1e-12


@given(signed_images)
def test_signed_round_trip(a):
    back = to_signed(from_signed(ImageSigned(a))).data
    assert np.max(np.abs(back - a)) <= 1e-12


@pytest.mark.parametrize("bad", [-1e-9, 1.0 + 1e-9, np.nan, np.inf])
def test_rgb_constructor_rejects_out_of_range(bad):
    a = np.full((2, 2, 3), 0.5)
    a[1, 1, 2] = bad
    with pytest.raises(ValidationError):
        ImageRGB(a)


def test_signed_rejects_out_of_range():
    with pytest.raises(ValidationError):
        ImageSigned(np.full((2, 2, 1), 1.5))


def test_rgb_shape_checked():
    with pytest.raises(ValidationError):
        ImageRGB(np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        ImageRGB(np.zeros((2, 2, 4)))


def test_images_are_immutable():
    img = ImageRGB.uniform(2, 2, 0.3)
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 0.9


def test_gray_range():
    GrayImage(np.array([[0.0, 1.0]]))
    with pytest.raises(ValidationError):
        GrayImage(np.array([[1.1]]))


def test_depthmap_invalid_cells_zeroed():
    dm = DepthMap(np.array([[1.0, np.nan]]), np.array([[True, False]]))
    assert dm.depth[0, 1] == 0.0


def test_depthmap_rejects_negative_valid_depth():
    with pytest.raises(ValidationError):
        DepthMap(np.array([[-1.0]]), np.array([[True]]))


def test_pointcloud_basics():
    assert len(PointCloud.empty()) == 0
    pc = PointCloud(np.ones((3, 3)), np.arange(3.0))
    both = PointCloud.concatenate([pc, pc])
    assert len(both) == 6 and both.intensity.shape == (6,)
    with pytest.raises(ValidationError):
        PointCloud(np.array([[0.0, np.inf, 0.0]]))


def test_quantize8_rule():
    assert list(quantize8(np.array([0.0, 0.5, 1.0, 1 / 255 * 0.49]))) == [0, 128, 255, 0]


@given(unit_images)
@settings(max_examples=30)
def test_png_round_trip_is_exact_on_8bit_grid(a):
    q = quantize8(a) / 255.0
    img = ImageRGB(q)
    assert np.array_equal(decode_png(encode_png(img)).data, img.data)


def test_dvim_round_trip(tmp_path, rng):
    a = rng.random((5, 7, 2))
    write_dvim(tmp_path / "a.dvim", a)
    raw = (tmp_path / "a.dvim").read_bytes()
    assert raw[:4] == b"DVIM" and len(raw) == 16 + a.size * 8
    assert np.array_equal(read_dvim(tmp_path / "a.dvim"), a)


def test_dvim_truncated(tmp_path, rng):
    write_dvim(tmp_path / "a.dvim", rng.random((3, 3, 1)))
    p = tmp_path / "a.dvim"
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(ValueError):
        read_dvim(p)


def test_depth_and_image_files(tmp_path, rng):
    dm = DepthMap(rng.random((4, 5)) * 10, rng.random((4, 5)) < 0.5)
    save_depth(tmp_path / "d.dvim", dm)
    back = load_depth(tmp_path / "d.dvim")
    assert np.array_equal(back.depth, dm.depth) and np.array_equal(back.valid, dm.valid)
    img = ImageRGB(rng.random((4, 5, 3)))
    save_image(tmp_path / "i.dvim", img)
    assert np.array_equal(load_image(tmp_path / "i.dvim").data, img.data)
