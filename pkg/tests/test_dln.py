import numpy as np
import pytest

from sgdvar import dln
from sgdvar.dln import DlnParams, Sample

from conftest import central_diff


def test_generate_shapes_and_sparsity():
    ds = dln.generate_sparse_data(d=100, n=40, k=5, seed=0)
    assert ds.X.shape == (40, 100) and ds.y.shape == (40,)
    assert ds.k == 5 and ds.dim == 200


def test_beta_entries_have_variance_two():
    vals = np.concatenate([dln.generate_sparse_data(20, 1, 5, seed=s).beta_true for s in range(400)])
    nz = vals[vals != 0]
    assert nz.size == 2000
    assert abs(nz.var() - 2.0) < 0.25


def test_invalid_sizes():
    with pytest.raises(ValueError):
        dln.generate_sparse_data(d=5, n=10, k=6)
    with pytest.raises(ValueError):
        dln.generate_sparse_data(d=5, n=0, k=1)


def test_noise_free_labels_are_linear():
    ds = dln.generate_sparse_data(d=8, n=20, k=2, seed=1, noise_std=0.0)
    np.testing.assert_allclose(ds.y, ds.X @ ds.beta_true, atol=1e-12)


def test_single_sample_functions_match_dataset(small_dln):
    th = dln.init_params(small_dln.d, 0.7, seed=2)
    z = small_dln.samples[3]
    assert dln.dln_loss(z, th) == pytest.approx(small_dln.sample_losses(th, [3])[0], rel=1e-14)
    np.testing.assert_allclose(dln.dln_grad(z, th), small_dln.sample_grads(th, [3])[0], rtol=1e-13)
    v = np.random.default_rng(0).standard_normal(th.size)
    np.testing.assert_allclose(dln.dln_hvp(z, th, v), small_dln.sample_hvps(th, v, [3])[0], rtol=1e-12, atol=1e-14)


def test_zero_init_is_saddle():
    z = Sample(np.array([1.0, -2.0, 0.5]), 3.0)
    np.testing.assert_array_equal(dln.dln_grad(z, np.zeros(6)), 0.0)


def test_gradient_and_hessian_finite_differences(small_dln):
    rng = np.random.default_rng(7)
    for _ in range(5):
        th = rng.standard_normal(small_dln.dim)
        np.testing.assert_allclose(small_dln.grad(th), central_diff(small_dln.loss, th), rtol=1e-6, atol=1e-8)
        fd = np.array([central_diff(lambda x: small_dln.grad(x)[k], th) for k in range(th.size)])
        np.testing.assert_allclose(small_dln.hessian(th), fd, rtol=1e-5, atol=1e-7)
        v = rng.standard_normal(th.size)
        np.testing.assert_allclose(small_dln.hvp(th, v), small_dln.hessian(th) @ v, rtol=1e-11, atol=1e-12)


def test_params_round_trip():
    th = np.arange(6.0)
    p = DlnParams.from_flat(th)
    np.testing.assert_array_equal(p.flat, th)
    np.testing.assert_array_equal(p.weight, np.array([0 * 3, 1 * 4, 2 * 5.0]))
    with pytest.raises(ValueError):
        DlnParams.from_flat(np.arange(5.0))


def test_population_grad_cov_matches_monte_carlo():
    beta = np.zeros(4)
    beta[[0, 2]] = [1.5, -0.7]
    model = dln.SparseRegressionModel(beta, 0.5)
    th = np.random.default_rng(1).standard_normal(8) * 0.8
    exact = model.grad_cov(th)
    mc = model.mc_grad_cov(th, n_draws=400_000, seed=2)
    assert np.linalg.norm(mc - exact) / np.linalg.norm(exact) < 0.03
    big = model.draw(400_000, seed=3)
    np.testing.assert_allclose(big.grad(th), model.mean_grad(th), atol=0.02 * np.abs(exact).max() ** 0.5)
    assert 2 * big.loss(th) == pytest.approx(model.population_mse(th), rel=0.01)


def test_mse_unhalved(small_dln):
    th = dln.init_params(small_dln.d, 0.3, seed=0)
    assert small_dln.mse(th) == pytest.approx(2 * small_dln.loss(th), rel=1e-14)


def test_save_load(tmp_path, small_dln):
    stem = str(tmp_path / "train")
    small_dln.save(stem)
    back = dln.RegressionDataset.load(stem)
    np.testing.assert_array_equal(back.X, small_dln.X)
    np.testing.assert_array_equal(back.y, small_dln.y)
    np.testing.assert_array_equal(back.beta_true, small_dln.beta_true)
    assert back.seed == 3


def test_held_out_shares_beta(small_dln):
    test = dln.held_out(small_dln, 50, seed=9)
    np.testing.assert_array_equal(test.beta_true, small_dln.beta_true)
    assert test.n_samples == 50
