import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nufftjac.grid import ImageGrid, cartesian_omega, nrmsd
from nufftjac.ndft import (
    DenseOperator,
    NdftOperator,
    OracleSizeError,
    exact_jvp_forward,
    fd_gradient,
    ndft_adjoint,
    ndft_forward,
)
from nufftjac.nufft import (
    PRESETS,
    gram_apply,
    kb_fourier,
    kb_kernel,
    nufft_adjoint,
    nufft_forward,
    plan,
    toeplitz_apply,
    toeplitz_build,
)
from nufftjac.phantom import make_rng, shepp_logan
from nufftjac.validation import spoke


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def patch40():
    grid = ImageGrid((40, 40))
    x = shepp_logan(grid, seed=3, phase=True, crop_from=(128, 128)).data
    return grid, x, spoke(80, 0.7)


class TestNdft:
    def test_zero_frequency_sums(self):
        x = crandn(make_rng(0), (5, 4))
        y = ndft_forward(x, np.zeros((1, 2)))
        assert y[0] == pytest.approx(x.sum())

    def test_single_voxel(self):
        om = make_rng(1).uniform(-np.pi, np.pi, (7, 1))
        np.testing.assert_allclose(ndft_forward(np.array([2 - 1j]), om), 2 - 1j)

    def test_cartesian_matches_centered_dft(self):
        x = crandn(make_rng(2), (8, 8))
        y = ndft_forward(x, cartesian_omega((8, 8)))
        ref = np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(x))).ravel()
        np.testing.assert_allclose(y, ref, atol=1e-11)

    def test_adjoint_pairing(self):
        rng = make_rng(3)
        grid = ImageGrid((16, 16))
        om = rng.uniform(-np.pi, np.pi, (50, 2))
        x, y = crandn(rng, grid.dims), crandn(rng, 50)
        lhs = np.vdot(y, ndft_forward(x, om))
        rhs = np.vdot(ndft_adjoint(y, om, grid), x)
        assert abs(lhs - rhs) <= 1e-12 * abs(lhs)

    def test_adjoint_of_dc_sample(self):
        np.testing.assert_allclose(ndft_adjoint(np.array([1.0]), np.zeros((1, 2)), ImageGrid((3, 3))), 1.0)

    def test_gram_matches_dense(self):
        rng = make_rng(4)
        grid = ImageGrid((12, 12))
        om = rng.uniform(-np.pi, np.pi, (60, 2))
        x = crandn(rng, grid.dims)
        a = DenseOperator(grid, om).entries
        got = ndft_adjoint(ndft_forward(x, om), om, grid).ravel()
        np.testing.assert_allclose(got, a.conj().T @ (a @ x.ravel()), rtol=1e-12, atol=1e-10)

    def test_blocked_matches_dense(self, monkeypatch):
        import nufftjac.ndft as nd

        rng = make_rng(5)
        grid = ImageGrid((6, 5))
        om = rng.uniform(-np.pi, np.pi, (40, 2))
        x = crandn(rng, grid.dims)
        monkeypatch.setattr(nd, "_CHUNK", 64)
        blocked = NdftOperator(grid, om)
        assert blocked._dense is None
        np.testing.assert_allclose(blocked.forward(x), DenseOperator(grid, om).forward(x), atol=1e-12)

    def test_size_cap(self):
        with pytest.raises(OracleSizeError):
            NdftOperator(ImageGrid((10, 10)), np.zeros((5, 2)), cap=499)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            NdftOperator(ImageGrid((4, 4)), np.zeros((3, 1)))


class TestExactJacobian:
    def test_at_zero_frequency(self):
        grid = ImageGrid((4, 5))
        x = crandn(make_rng(6), grid.dims)
        for d in range(2):
            got = exact_jvp_forward(x, np.zeros((1, 2)), d)
            assert got[0] == pytest.approx(-1j * np.sum(x * grid.coord_array(d)))

    def test_symmetric_image_cancels(self):
        x = np.zeros((5, 5))
        x[1, 2] = x[3, 2] = 1.0
        x[2, 0] = x[2, 4] = 2.0
        for d in range(2):
            assert abs(exact_jvp_forward(x, np.zeros((1, 2)), d)[0]) < 1e-15

    def test_matches_central_differences(self, patch40):
        grid, x, om = patch40
        eps = 1e-5
        for d in range(2):
            e = np.zeros_like(om)
            e[:, d] = eps
            fd = (ndft_forward(x, om + e, grid) - ndft_forward(x, om - e, grid)) / (2 * eps)
            assert nrmsd(exact_jvp_forward(x, om, d, grid), fd) <= 1e-6

    def test_bad_dimension(self):
        with pytest.raises(ValueError):
            exact_jvp_forward(np.ones((2, 2)), np.zeros((1, 2)), 2)


class TestFdGradient:
    def test_constant_loss(self):
        assert not np.any(fd_gradient(lambda t: 3.0, np.ones((4, 2))))

    def test_quadratic(self):
        om = make_rng(7).uniform(-1, 1, (6, 2))
        g = fd_gradient(lambda t: 0.5 * np.sum(t.omega**2), om)
        np.testing.assert_allclose(g, om, atol=1e-9)

    def test_matches_analytic_norm_gradient(self):
        rng = make_rng(8)
        grid = ImageGrid((8, 8))
        x = crandn(rng, grid.dims)
        om = rng.uniform(-np.pi, np.pi, (10, 2))
        ax = ndft_forward(x, om, grid)
        analytic = np.stack([2 * np.real(np.conj(exact_jvp_forward(x, om, d, grid)) * ax)
                             for d in range(2)], axis=1)
        fd = fd_gradient(lambda t: np.sum(np.abs(ndft_forward(x, t.omega, grid)) ** 2), om)
        assert nrmsd(fd, analytic) <= 1e-5

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            fd_gradient(lambda t: 0.0, np.zeros((1, 1)), eps=0)


class TestKernel:
    def test_kernel_support_and_peak(self):
        s = np.linspace(-4, 4, 81)
        k = kb_kernel(s, 6, 10.0)
        assert np.all(k[np.abs(s) > 3] == 0)
        assert k[40] == k.max()

    def test_fourier_transform_matches_quadrature(self):
        from scipy.integrate import quad

        j, beta = 6, 13.9
        for f in (0.0, 0.05, 0.15):
            num = quad(lambda s: kb_kernel(np.array([s]), j, beta)[0] * np.cos(2 * np.pi * f * s),
                       -j / 2, j / 2, limit=200)[0]
            assert kb_fourier(np.array([f]), j, beta)[0] == pytest.approx(num, rel=1e-8)


class TestNufft:
    def test_presets(self):
        assert PRESETS["low"] == (1.25, 5)
        assert PRESETS["high"] == (2.0, 6)
        p = plan(ImageGrid((8, 8)), np.zeros((1, 2)), preset="low")
        assert (p.sigma, p.width) == (1.25, 5)

    def test_plan_is_deterministic(self):
        om = make_rng(9).uniform(-np.pi, np.pi, (30, 2))
        a = plan(ImageGrid((10, 12)), om, preset="high")
        b = plan(ImageGrid((10, 12)), om, preset="high")
        assert (a.interp != b.interp).nnz == 0
        np.testing.assert_array_equal(a.deapodization, b.deapodization)

    def test_delta_has_flat_spectrum(self):
        grid = ImageGrid((32, 32))
        x = np.zeros(grid.dims, complex)
        x[16, 16] = 1.0
        om = make_rng(10).uniform(-np.pi, np.pi, (200, 2))
        y = nufft_forward(plan(grid, om, preset="high"), x)
        assert np.abs(y - 1).max() <= 1e-4

    def test_phantom_spoke_vs_oracle(self, patch40):
        grid, x, om = patch40
        assert nrmsd(nufft_forward(plan(grid, om, preset="high"), x), ndft_forward(x, om, grid)) <= 1e-4

    def test_zero_image(self):
        p = plan(ImageGrid((8, 8)), make_rng(11).uniform(-np.pi, np.pi, (9, 2)))
        assert not np.any(nufft_forward(p, np.zeros((8, 8))))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["low", "high"]),
           st.sampled_from([(12,), (9, 10), (5, 6, 4)]))
    def test_exact_adjoint_pairing(self, seed, preset, dims):
        rng = make_rng(seed)
        grid = ImageGrid(dims)
        om = rng.uniform(-np.pi, np.pi, (25, len(dims)))
        p = plan(grid, om, preset=preset)
        x, y = crandn(rng, dims), crandn(rng, 25)
        lhs = np.vdot(y, nufft_forward(p, x))
        rhs = np.vdot(nufft_adjoint(p, y), x)
        assert abs(lhs - rhs) <= 1e-12 * abs(lhs)

    def test_adjoint_vs_oracle(self, patch40):
        grid, _, om = patch40
        y = crandn(make_rng(12), om.shape[0])
        assert nrmsd(nufft_adjoint(plan(grid, om), y), ndft_adjoint(y, om, grid)) <= 1e-4

    def test_dc_sample_adjoint_is_constant(self):
        y = np.array([1.0 + 0j])
        img = nufft_adjoint(plan(ImageGrid((20, 20)), np.zeros((1, 2))), y)
        assert np.abs(img - 1).max() <= 1e-4

    def test_odd_sizes_and_batching(self):
        rng = make_rng(13)
        grid = ImageGrid((7, 9))
        om = rng.uniform(-np.pi, np.pi, (40, 2))
        x = crandn(rng, (3,) + grid.dims)
        p = plan(grid, om)
        got = nufft_forward(p, x)
        assert got.shape == (3, 40)
        for k in range(3):
            assert nrmsd(got[k], ndft_forward(x[k], om, grid)) <= 1e-4

    def test_single_precision(self):
        rng = make_rng(14)
        grid = ImageGrid((16, 16))
        om = rng.uniform(-np.pi, np.pi, (40, 2))
        x = crandn(rng, grid.dims)
        p = plan(grid, om, precision="single")
        assert nrmsd(nufft_forward(p, x), ndft_forward(x, om, grid)) <= 1e-4

    @pytest.mark.parametrize("kw", [dict(sigma=0.9), dict(width=1), dict(width=11),
                                    dict(precision="half"), dict(preset="medium")])
    def test_invalid_options(self, kw):
        with pytest.raises(ValueError):
            plan(ImageGrid((8, 8)), np.zeros((1, 2)), **kw)

    def test_outside_nyquist_box(self):
        with pytest.raises(ValueError):
            plan(ImageGrid((8, 8)), np.array([[3.2, 0.0]]))

    def test_low_preset_is_less_accurate(self, patch40):
        grid, x, om = patch40
        ref = ndft_forward(x, om, grid)
        err = {k: nrmsd(nufft_forward(plan(grid, om, preset=k), x), ref) for k in PRESETS}
        assert err["low"] > err["high"]


class TestToeplitz:
    @pytest.fixture
    def setup40(self):
        rng = make_rng(15)
        grid = ImageGrid((40, 40))
        om = np.concatenate([spoke(80, a) for a in np.pi * np.arange(8) / 8])
        return grid, om, crandn(rng, grid.dims)

    def test_matches_direct_gram(self, setup40):
        grid, om, x = setup40
        p = plan(grid, om)
        assert nrmsd(toeplitz_apply(toeplitz_build(p), x), gram_apply(p, x)) <= 1e-5

    def test_matches_exact_gram(self, setup40):
        grid, om, x = setup40
        exact = NdftOperator(grid, om)
        ref = exact.adjoint(exact.forward(x))
        assert nrmsd(toeplitz_apply(toeplitz_build(plan(grid, om)), x), ref) <= 1e-8

    def test_weighted(self):
        rng = make_rng(16)
        grid = ImageGrid((10, 11))
        om = rng.uniform(-np.pi, np.pi, (80, 2))
        w = rng.uniform(0, 2, 80)
        x = crandn(rng, grid.dims)
        exact = NdftOperator(grid, om)
        ref = exact.adjoint(w * exact.forward(x))
        assert nrmsd(toeplitz_apply(toeplitz_build(plan(grid, om), w), x), ref) <= 1e-8

    def test_cartesian_gram_is_scaled_identity(self):
        grid = ImageGrid((16, 16))
        x = crandn(make_rng(17), grid.dims)
        p = plan(grid, cartesian_omega(grid.dims))
        assert nrmsd(toeplitz_apply(toeplitz_build(p), x), grid.size * x) <= 1e-6
        wide = plan(grid, cartesian_omega(grid.dims), sigma=2.0, width=10)
        assert nrmsd(gram_apply(wide, x), grid.size * x) <= 1e-6

    def test_psd(self, setup40):
        grid, om, x = setup40
        kern = toeplitz_build(plan(grid, om))
        q = np.vdot(x, toeplitz_apply(kern, x))
        assert abs(q.imag) <= 1e-10 * abs(q.real) and q.real > 0

    def test_rejects_bad_weights(self):
        p = plan(ImageGrid((4, 4)), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            toeplitz_build(p, np.ones(2))
        with pytest.raises(ValueError):
            toeplitz_build(p, -np.ones(3))

    def test_shape_check(self):
        kern = toeplitz_build(plan(ImageGrid((4, 4)), np.zeros((3, 2))))
        with pytest.raises(ValueError):
            toeplitz_apply(kern, np.ones((4, 5)))
