import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from semisr import imaging
from semisr.errors import FormatError, ShapeError
from semisr.imaging import DegradationSpec, ImageTensor


def save_uint8(tmp_path, arr, name="img.png"):
    from PIL import Image

    path = tmp_path / name
    Image.fromarray(arr).save(path)
    return path


class TestLoadImage:
    def test_white_png_maps_to_one(self, tmp_path):
        path = save_uint8(tmp_path, np.full((5, 7, 3), 255, dtype=np.uint8))
        img = imaging.load_image(path)
        assert np.allclose(img.data, 1.0)

    def test_black_png_maps_to_zero(self, tmp_path):
        path = save_uint8(tmp_path, np.zeros((5, 7, 3), dtype=np.uint8))
        img = imaging.load_image(path)
        assert np.allclose(img.data, 0.0)

    def test_shape_passthrough(self, tmp_path):
        path = save_uint8(tmp_path, np.random.default_rng(0).integers(0, 256, (256, 256, 3), dtype=np.uint8))
        img = imaging.load_image(path)
        assert img.data.shape == (256, 256, 3)

    def test_grayscale_gets_channel_axis(self, tmp_path):
        path = save_uint8(tmp_path, np.zeros((4, 6), dtype=np.uint8))
        img = imaging.load_image(path)
        assert img.data.shape == (4, 6, 1)

    def test_unreadable_file_raises(self, tmp_path):
        bad = tmp_path / "not_an_image.png"
        bad.write_bytes(b"this is not a png")
        with pytest.raises(FormatError):
            imaging.load_image(bad)

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = ImageTensor((rng.integers(0, 256, (9, 11, 3)) / 255.0).astype(np.float32))
        imaging.save_image(img, tmp_path / "rt.png")
        back = imaging.load_image(tmp_path / "rt.png")
        assert np.allclose(back.data, img.data, atol=1e-6)


class TestDegrade:
    def test_constant_is_fixed_point_256_to_64(self):
        img = ImageTensor(np.full((256, 256, 3), 0.5, dtype=np.float32))
        out = imaging.degrade(img, DegradationSpec(scale=4, kernel="bicubic", antialias=True))
        assert out.data.shape == (64, 64, 3)
        assert np.abs(out.data - 0.5).max() < 1e-6

    @pytest.mark.parametrize("kernel", imaging.KERNELS)
    def test_constancy_all_kernels(self, kernel):
        img = ImageTensor(np.full((16, 16, 1), 0.37, dtype=np.float64))
        out = imaging.degrade(img, DegradationSpec(scale=4, kernel=kernel))
        assert np.abs(out.data - 0.37).max() < 1e-6

    def test_average_pool_2x2_by_hand(self):
        a, b, c, d = 0.1, 0.9, 0.4, 0.2
        img = ImageTensor(np.array([[[a], [b]], [[c], [d]]], dtype=np.float64))
        out = imaging.degrade(img, DegradationSpec(scale=2, kernel="average-pool"))
        assert out.data.shape == (1, 1, 1)
        assert abs(out.data[0, 0, 0] - (a + b + c + d) / 4) < 1e-12

    def test_non_divisible_dims_raise(self):
        img = ImageTensor(np.zeros((6, 6, 1), dtype=np.float32))
        with pytest.raises(ShapeError):
            imaging.degrade(img, DegradationSpec(scale=4))

    def test_range_preserved_after_clamp(self):
        # a hard step makes bicubic overshoot; the clamp must absorb it
        arr = np.zeros((16, 16, 1), dtype=np.float64)
        arr[:, 8:] = 1.0
        out = imaging.degrade(ImageTensor(arr), DegradationSpec(scale=4, kernel="bicubic"))
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_batch_and_single_forms_identical(self):
        rng = np.random.default_rng(11)
        arr = rng.random((32, 32, 3))
        spec = DegradationSpec(scale=4, kernel="bicubic")
        single = imaging.degrade(ImageTensor(arr), spec).data
        x = torch.from_numpy(arr.transpose(2, 0, 1)[None])
        batch = imaging.degrade_batch(x, spec).squeeze(0).permute(1, 2, 0).numpy()
        np.testing.assert_array_equal(single, batch)

    def test_gradient_matches_finite_differences(self):
        # sum(degrade(x)) is linear in x away from the clamp, so central
        # differences are exact up to roundoff
        rng = np.random.default_rng(5)
        x0 = rng.uniform(0.2, 0.8, size=(1, 1, 8, 8))
        spec = DegradationSpec(scale=2, kernel="bicubic")
        x = torch.tensor(x0, dtype=torch.float64, requires_grad=True)
        imaging.degrade_batch(x, spec).sum().backward()
        autograd = x.grad.numpy()

        eps = 1e-6
        fd = np.zeros_like(x0)
        for i in range(8):
            for j in range(8):
                xp, xm = x0.copy(), x0.copy()
                xp[0, 0, i, j] += eps
                xm[0, 0, i, j] -= eps
                fp = imaging.degrade_batch(torch.tensor(xp), spec).sum().item()
                fm = imaging.degrade_batch(torch.tensor(xm), spec).sum().item()
                fd[0, 0, i, j] = (fp - fm) / (2 * eps)
        rel = np.abs(autograd - fd).max() / max(np.abs(fd).max(), 1e-12)
        assert rel < 1e-4


class TestUpsampleNaive:
    def test_single_pixel_replication(self):
        img = ImageTensor(np.array([[[0.3]]], dtype=np.float64))
        out = imaging.upsample_naive(img, 4)
        assert out.data.shape == (4, 4, 1)
        assert np.all(out.data == 0.3)

    def test_identity_at_scale_1(self):
        arr = np.random.default_rng(0).random((3, 5, 3))
        out = imaging.upsample_naive(ImageTensor(arr), 1)
        np.testing.assert_array_equal(out.data, arr)

    @given(
        h=st.integers(1, 6), w=st.integers(1, 6),
        s=st.integers(1, 4), seed=st.integers(0, 2**16),
    )
    @settings(max_examples=40, deadline=None)
    def test_roundtrip_with_average_pool_is_exact(self, h, w, s, seed):
        arr = np.random.default_rng(seed).random((h, w, 1))
        up = imaging.upsample_naive(ImageTensor(arr), s)
        back = imaging.degrade(up, DegradationSpec(scale=s, kernel="average-pool"))
        np.testing.assert_allclose(back.data, arr, atol=1e-15)


class TestResize:
    def test_center_crop_square(self):
        arr = np.zeros((10, 6, 1), dtype=np.float32)
        out = imaging.center_crop_square(ImageTensor(arr))
        assert out.data.shape == (6, 6, 1)

    def test_resize_integer_factor_uses_degrade(self):
        rng = np.random.default_rng(1)
        img = ImageTensor(rng.random((64, 64, 3)).astype(np.float32))
        via_resize = imaging.resize_image(img, (16, 16)).data
        via_degrade = imaging.degrade(img, DegradationSpec(scale=4)).data
        np.testing.assert_allclose(via_resize, via_degrade, atol=1e-6)

    def test_resize_upscale_shape(self):
        img = ImageTensor(np.random.default_rng(2).random((20, 30, 3)).astype(np.float32))
        out = imaging.resize_image(img, (40, 50))
        assert out.data.shape == (40, 50, 3)
