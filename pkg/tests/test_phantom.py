import numpy as np
import pytest

from nufftjac.grid import ImageGrid
from nufftjac.phantom import load_dataset, make_dataset, shepp_logan, sim_coils


class TestSheppLogan:
    def test_real_without_phase(self):
        x = shepp_logan(ImageGrid((64, 64)), phase=False).data
        assert not np.any(x.imag)
        assert 0 <= np.abs(x).min() and np.abs(x).max() <= 1 + 1e-12

    @pytest.mark.parametrize("phase", [True, "voxel", "smooth"])
    def test_phase_keeps_magnitude(self, phase):
        grid = ImageGrid((32, 32))
        ref = shepp_logan(grid, phase=False).data
        x = shepp_logan(grid, seed=3, phase=phase).data
        np.testing.assert_allclose(np.abs(x), np.abs(ref), atol=1e-14)
        assert np.any(x.imag)

    def test_original_intensities(self):
        x = shepp_logan(ImageGrid((64, 64)), high_contrast=False).data.real
        assert x.max() == pytest.approx(2.0) and x.min() >= 0

    def test_crop_takes_center(self):
        big = shepp_logan(ImageGrid((64, 64))).data
        crop = shepp_logan(ImageGrid((40, 40)), crop_from=(64, 64)).data
        np.testing.assert_array_equal(crop, big[12:52, 12:52])

    def test_jitter_zero_is_identity(self):
        grid = ImageGrid((32, 32))
        np.testing.assert_array_equal(shepp_logan(grid, seed=1, jitter=0.0).data,
                                      shepp_logan(grid, seed=2, jitter=0.0).data)

    def test_jitter_changes_image(self):
        grid = ImageGrid((32, 32))
        assert not np.array_equal(shepp_logan(grid, seed=1, jitter=0.05).data,
                                  shepp_logan(grid, seed=2, jitter=0.05).data)

    def test_errors(self):
        with pytest.raises(ValueError):
            shepp_logan(ImageGrid((4, 4, 4)))
        with pytest.raises(ValueError):
            shepp_logan(ImageGrid((8, 8)), crop_from=(4, 4))
        with pytest.raises(ValueError):
            shepp_logan(ImageGrid((8, 8)), phase="random")


class TestCoils:
    @pytest.mark.parametrize("n", [2, 8])
    def test_unit_root_sum_square(self, n):
        maps = sim_coils(ImageGrid((24, 20)), n, seed=4).maps
        np.testing.assert_allclose(np.sqrt(np.sum(np.abs(maps) ** 2, axis=0)), 1.0, atol=1e-12)

    def test_single_coil_has_unit_magnitude(self):
        maps = sim_coils(ImageGrid((16, 16)), 1).maps
        np.testing.assert_allclose(np.abs(maps), 1.0, atol=1e-12)

    def test_seeded(self):
        grid = ImageGrid((16, 16))
        np.testing.assert_array_equal(sim_coils(grid, 4, 7).maps, sim_coils(grid, 4, 7).maps)
        with pytest.raises(ValueError):
            sim_coils(grid, 0)


class TestDataset:
    def test_files_are_byte_identical(self, tmp_path):
        grid = ImageGrid((16, 16))
        make_dataset(3, grid, seed=5, out_dir=tmp_path / "a")
        make_dataset(3, grid, seed=5, out_dir=tmp_path / "b")
        for name in ["manifest.json"] + [f"phantom_{i:04d}.cimg" for i in range(3)]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_load_round_trip(self, tmp_path):
        grid = ImageGrid((16, 16))
        imgs, manifest = make_dataset(4, grid, seed=1, out_dir=tmp_path)
        back, m2 = load_dataset(tmp_path)
        np.testing.assert_array_equal(back, imgs)
        assert m2 == manifest and manifest["count"] == 4

    def test_images_differ(self):
        imgs, _ = make_dataset(2, ImageGrid((16, 16)), seed=0)
        assert not np.array_equal(imgs[0], imgs[1])

    def test_empty(self):
        with pytest.raises(ValueError):
            make_dataset(0, ImageGrid((8, 8)))
