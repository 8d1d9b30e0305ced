import numpy as np
import pytest

from drnet.augment import (
    AugmentConfig,
    AugmentParams,
    apply_affine,
    apply_brightness,
    augment_image,
    sample_params,
)
from drnet.errors import ShapeError
from drnet.imageproc import NormalizedImage
from drnet.tensor import RngStream


def rand_image(seed=0, size=32):
    rng = np.random.default_rng(seed)
    return NormalizedImage(rng.uniform(-1, 1, size=(size, size)).astype(np.float32))


def zero_config():
    return AugmentConfig(rotation_max=0, shift_max=0, shear_max=0, zoom_max=0,
                         hflip=False, brightness_range=(1.0, 1.0))


class TestSampleParams:
    def test_zero_ranges_give_identity(self):
        params = sample_params(zero_config(), RngStream(0))
        assert params.is_identity_affine()
        assert not params.flip
        assert params.brightness == 1.0

    def test_deterministic_per_stream(self):
        a = sample_params(AugmentConfig(), RngStream(5).child(3, 7))
        b = sample_params(AugmentConfig(), RngStream(5).child(3, 7))
        assert a == b

    def test_rotation_range_monte_carlo(self):
        base = RngStream(42)
        angles = np.array([
            sample_params(AugmentConfig(), base.child(i)).angle for i in range(10_000)
        ])
        assert -20.0 <= angles.min() <= -19.0
        assert 19.0 <= angles.max() <= 20.0

    def test_config_validation(self):
        with pytest.raises(ShapeError):
            AugmentConfig(rotation_max=-1)
        with pytest.raises(ShapeError):
            AugmentConfig(zoom_max=1.0)
        with pytest.raises(ShapeError):
            AugmentConfig(brightness_range=(0.0, 1.0))


class TestApplyAffine:
    def test_identity_params_return_input(self):
        img = rand_image(1)
        out = apply_affine(img, AugmentParams())
        np.testing.assert_array_equal(out.data, img.data)

    def test_hflip_is_involution(self):
        img = rand_image(2)
        flip = AugmentParams(flip=True)
        twice = apply_affine(apply_affine(img, flip), flip)
        np.testing.assert_array_equal(twice.data, img.data)

    def test_one_pixel_shift_moves_bright_pixel(self):
        size = 16
        data = np.full((size, size), -1.0, dtype=np.float32)
        r, c = 7, 5
        data[r, c] = 1.0
        img = NormalizedImage(data)
        out = apply_affine(img, AugmentParams(shift_x=1.0 / size)).data
        assert out[r, c + 1] == pytest.approx(1.0)
        assert out[r, c] == pytest.approx(-1.0)

    def test_out_of_bounds_fill_is_black(self):
        img = NormalizedImage(np.ones((8, 8), dtype=np.float32))
        out = apply_affine(img, AugmentParams(shift_x=0.5)).data
        assert out[0, 0] == -1.0

    def test_output_stays_in_range_and_shape(self):
        img = rand_image(3)
        rng = RngStream(9)
        for i in range(20):
            out = augment_image(img, AugmentConfig(), rng.child(i))
            assert out.data.shape == img.data.shape
            assert out.data.min() >= -1.0 and out.data.max() <= 1.0


class TestBrightness:
    def test_factor_one_identity(self):
        img = rand_image(4)
        np.testing.assert_allclose(apply_brightness(img, 1.0).data, img.data, atol=1e-7)

    def test_black_is_fixed_point(self):
        img = NormalizedImage(np.full((5, 5), -1.0, dtype=np.float32))
        for factor in (0.5, 1.0, 1.5):
            np.testing.assert_array_equal(apply_brightness(img, factor).data, img.data)

    def test_formula_value(self):
        img = NormalizedImage(np.zeros((1, 1), dtype=np.float32))
        assert apply_brightness(img, 1.2).data[0, 0] == pytest.approx(0.2, abs=1e-6)

    def test_nonpositive_factor_rejected(self):
        with pytest.raises(ShapeError):
            apply_brightness(rand_image(), 0.0)


def test_zero_config_makes_module_identity():
    img = rand_image(5)
    out = augment_image(img, zero_config(), RngStream(3))
    np.testing.assert_array_equal(out.data, img.data)
