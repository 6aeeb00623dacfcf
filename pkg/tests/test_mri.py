import numpy as np
import pytest

from nufftjac.grid import ImageGrid, cartesian_omega, nrmsd
from nufftjac.mri import (
    Encoding,
    FieldModel,
    Regularizer,
    SensitivityMaps,
    field_forward,
    field_tables_svd,
    regularizer_apply,
    regularizer_gram,
    sense_adjoint,
    sense_forward,
    simulate_kspace,
)
from nufftjac.ndft import DenseOperator
from nufftjac.nufft import nufft_forward, plan
from nufftjac.phantom import make_rng, shepp_logan, sim_coils
from nufftjac.validation import spoke


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestSense:
    def test_unit_single_coil_reduces_to_plain_transform(self):
        rng = make_rng(0)
        grid = ImageGrid((10, 10))
        om = rng.uniform(-np.pi, np.pi, (30, 2))
        x = crandn(rng, grid.dims)
        op = Encoding(grid, om, maps=np.ones((1,) + grid.dims))
        np.testing.assert_array_equal(op.forward(x)[0], nufft_forward(plan(grid, om), x))
        np.testing.assert_allclose(Encoding(grid, om).forward(x), op.forward(x))

    def test_adjoint_pairing(self):
        rng = make_rng(1)
        grid = ImageGrid((12, 12))
        om = rng.uniform(-np.pi, np.pi, (40, 2))
        op = Encoding(grid, om, maps=sim_coils(grid, 4, 1))
        x, y = crandn(rng, grid.dims), crandn(rng, op.kshape)
        lhs = np.vdot(y, sense_forward(op, x).samples)
        rhs = np.vdot(sense_adjoint(op, y), x)
        assert abs(lhs - rhs) <= 1e-12 * abs(lhs)

    def test_eight_coils_match_dense_oracle(self):
        grid = ImageGrid((40, 40))
        om = spoke(80, 0.3)
        maps = sim_coils(grid, 8, 2).maps
        x = shepp_logan(grid, seed=2, phase=True).data
        a = DenseOperator(grid, om).entries
        ref = np.stack([a @ (m * x).ravel() for m in maps])
        assert nrmsd(Encoding(grid, om, maps=maps).forward(x), ref) <= 1e-4
        y = crandn(make_rng(2), ref.shape)
        ref_adj = sum(m.conj().ravel() * (a.conj().T @ yc) for m, yc in zip(maps, y))
        assert nrmsd(Encoding(grid, om, maps=maps).adjoint(y), ref_adj) <= 1e-4

    def test_ndft_backend_matches_dense_method(self):
        rng = make_rng(3)
        grid = ImageGrid((5, 6))
        om = rng.uniform(-np.pi, np.pi, (9, 2))
        op = Encoding(grid, om, maps=sim_coils(grid, 2, 0), backend="ndft")
        x = crandn(rng, grid.dims)
        np.testing.assert_allclose(op.dense() @ x.ravel(), op.forward(x).ravel(), atol=1e-12)

    def test_batched_images(self):
        rng = make_rng(4)
        grid = ImageGrid((8, 8))
        op = Encoding(grid, rng.uniform(-np.pi, np.pi, (20, 2)), maps=sim_coils(grid, 3, 0))
        xs = crandn(rng, (2,) + grid.dims)
        out = op.forward(xs)
        assert out.shape == (2, 3, 20)
        np.testing.assert_allclose(out[1], op.forward(xs[1]))
        np.testing.assert_allclose(op.adjoint(out)[0], op.adjoint(out[0]))

    def test_with_omega_keeps_settings(self):
        grid = ImageGrid((8, 8))
        op = Encoding(grid, np.zeros((4, 2)), maps=sim_coils(grid, 2, 0), preset="low")
        moved = op.with_omega(np.full((4, 2), 0.1))
        assert moved.backend.width == 5 and moved.n_coils == 2

    def test_shape_errors(self):
        grid = ImageGrid((8, 8))
        with pytest.raises(ValueError):
            Encoding(grid, np.zeros((4, 2)), maps=np.ones((2, 8, 7)))
        op = Encoding(grid, np.zeros((4, 2)))
        with pytest.raises(ValueError):
            op.forward(np.ones((8, 7)))
        with pytest.raises(ValueError):
            op.adjoint(np.ones((1, 5)))
        with pytest.raises(ValueError):
            Encoding(grid, np.zeros((4, 2)), backend="fftw")

    def test_normalized_maps(self):
        m = SensitivityMaps(np.array([[[3.0, 0.0]], [[4.0, 0.0]]])).normalized()
        np.testing.assert_allclose(m.maps[:, 0, 0], [0.6, 0.8])
        assert not np.any(m.maps[:, 0, 1])


class TestRegularizer:
    def test_identity(self):
        x = crandn(make_rng(5), (4, 4))
        np.testing.assert_array_equal(regularizer_gram(Regularizer(), x), x)

    def test_constants_in_null_space(self):
        t = Regularizer("finite-difference")
        assert t.null_space == "constants"
        np.testing.assert_allclose(regularizer_gram(t, np.full((5, 6), 2 + 1j)), 0)

    def test_periodic_difference_example(self):
        t = Regularizer("finite-difference")
        x = np.array([1.0, 2.0, 4.0])
        np.testing.assert_array_equal(regularizer_apply(t, x)[0], [1, 2, -3])
        d = np.roll(np.eye(3), 1, axis=1) - np.eye(3)
        np.testing.assert_allclose(t.gram(x), d.T @ d @ x)

    @pytest.mark.parametrize("boundary", ["periodic", "zero"])
    def test_adjoint_is_transpose(self, boundary):
        rng = make_rng(6)
        t = Regularizer("finite-difference", boundary)
        x = crandn(rng, (4, 5))
        v = crandn(rng, (2, 4, 5))
        assert np.vdot(v, t.apply(x)) == pytest.approx(np.vdot(t.adjoint(v, 2), x))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Regularizer("tv")
        with pytest.raises(ValueError):
            Regularizer("finite-difference", "mirror")


class TestFieldModel:
    def test_trivial_segmentation(self):
        rng = make_rng(7)
        grid = ImageGrid((8, 8))
        om = rng.uniform(-np.pi, np.pi, (15, 2))
        x = crandn(rng, grid.dims)
        fm = FieldModel(np.ones((15, 1)), np.ones((1,) + grid.dims))
        np.testing.assert_allclose(field_forward(Encoding(grid, om, field=fm), x)[0],
                                   nufft_forward(plan(grid, om), x))

    def test_phase_rotation(self):
        rng = make_rng(8)
        grid = ImageGrid((8, 8))
        om = rng.uniform(-np.pi, np.pi, (15, 2))
        x = crandn(rng, grid.dims)
        phi = rng.uniform(-np.pi, np.pi, 15)
        fm = FieldModel(np.exp(-1j * phi)[:, None], np.ones((1, 64)))
        got = Encoding(grid, om, field=fm).forward(x)[0]
        np.testing.assert_allclose(got, np.exp(-1j * phi) * nufft_forward(plan(grid, om), x))

    def test_segmented_model_vs_direct_sum(self):
        rng = make_rng(9)
        grid = ImageGrid((12, 12))
        om = np.concatenate([spoke(24, a) for a in (0.0, 1.0, 2.0)])
        t = np.tile(np.arange(24) * 0.02, 3)
        fmap = 2 * np.pi * 5.0 * np.exp(-np.sum(grid.coords**2, axis=0) / 40)
        x = crandn(rng, grid.dims)
        direct = np.exp(-1j * om @ grid.points().T) * np.exp(-1j * np.outer(t, fmap.ravel()))
        op = Encoding(grid, om, field=field_tables_svd(fmap, t, 8))
        assert nrmsd(op.forward(x)[0], direct @ x.ravel()) <= 1e-3
        y = crandn(rng, om.shape[0])
        assert nrmsd(op.adjoint(y), (direct.conj().T @ y).reshape(grid.dims)) <= 1e-3

    def test_field_pairing(self):
        rng = make_rng(10)
        grid = ImageGrid((6, 6))
        fm = FieldModel(crandn(rng, (10, 3)), crandn(rng, (3, 6, 6)))
        op = Encoding(grid, rng.uniform(-np.pi, np.pi, (10, 2)), maps=sim_coils(grid, 2, 0), field=fm)
        x, y = crandn(rng, grid.dims), crandn(rng, op.kshape)
        assert np.vdot(y, op.forward(x)) == pytest.approx(np.vdot(op.adjoint(y), x), rel=1e-12)

    def test_table_checks(self):
        with pytest.raises(ValueError):
            FieldModel(np.ones((4, 2)), np.ones((3, 5)))
        grid = ImageGrid((4, 4))
        with pytest.raises(ValueError):
            Encoding(grid, np.zeros((3, 2)), field=FieldModel(np.ones((4, 1)), np.ones((1, 16))))
        with pytest.raises(ValueError):
            field_forward(Encoding(grid, np.zeros((3, 2))), np.ones((4, 4)))


class TestSimulate:
    def test_zero_image(self):
        grid = ImageGrid((8, 8))
        op = Encoding(grid, make_rng(11).uniform(-np.pi, np.pi, (10, 2)))
        assert not np.any(simulate_kspace(op, np.zeros(grid.dims)).samples)

    def test_cartesian_round_trip(self):
        grid = ImageGrid((8, 8))
        x = crandn(make_rng(12), grid.dims)
        op = Encoding(grid, cartesian_omega(grid.dims), backend="ndft")
        y = simulate_kspace(op, x).samples
        # E'E = N I on the complete grid
        assert nrmsd(op.adjoint(y) / grid.size, x) <= 1e-6

    def test_zero_noise_is_bit_exact(self):
        grid = ImageGrid((8, 8))
        op = Encoding(grid, make_rng(13).uniform(-np.pi, np.pi, (10, 2)))
        x = crandn(make_rng(14), grid.dims)
        np.testing.assert_array_equal(simulate_kspace(op, x, 0.0, seed=1).samples, op.forward(x))

    def test_noise_is_seeded(self):
        grid = ImageGrid((8, 8))
        op = Encoding(grid, make_rng(15).uniform(-np.pi, np.pi, (500, 2)))
        x = np.zeros(grid.dims)
        a = simulate_kspace(op, x, 0.5, seed=3).samples
        np.testing.assert_array_equal(a, simulate_kspace(op, x, 0.5, seed=3).samples)
        assert np.std(a) == pytest.approx(0.5, rel=0.1)
