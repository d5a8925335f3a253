import numpy as np
import pytest
from scipy.optimize import check_grad
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel, Matern, WhiteKernel

from batinfer.exceptions import NumericalError, ValidationError
from batinfer.gp import GPRegressor, KernelConfig, _cholesky_with_jitter, stationary_kernel


def _data(rng, n=25, d=2):
    X = rng.uniform(-2, 3, size=(n, d))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1] ** 2 + 0.01 * rng.standard_normal(n)
    return X, y


@pytest.mark.parametrize("kind,sk", [("se", None), ("matern52", 2.5), ("matern32", 1.5)])
def test_matches_sklearn_with_fixed_hyperparameters(rng, kind, sk):
    X, y = _data(rng)
    ls = np.array([0.7, 1.3])
    gp = GPRegressor(signal_variance=1.7, lengthscales=ls, noise_variance=1e-3, optimize=False, normalize_y=False, kernel=kind).fit(X, y)
    raw_ls = ls * gp.x_scale_
    base = RBF(raw_ls) if sk is None else Matern(raw_ls, nu=sk)
    ref = GaussianProcessRegressor(ConstantKernel(1.7) * base + WhiteKernel(1e-3), optimizer=None, alpha=0.0).fit(X, y)
    Xq = rng.uniform(-2, 3, size=(30, 2))
    m, s = gp.predict(Xq, return_std=True)
    rm, rs = ref.predict(Xq, return_std=True)
    np.testing.assert_allclose(m, rm, rtol=1e-6, atol=1e-8)
    # sklearn's std includes the white-noise term
    np.testing.assert_allclose(s**2 + 1e-3, rs**2, rtol=1e-6, atol=1e-9)
    assert gp.log_marginal_likelihood() == pytest.approx(ref.log_marginal_likelihood_value_, rel=1e-8)


@pytest.mark.parametrize("kind", ["se", "matern32", "matern52"])
def test_lml_gradient(rng, kind):
    X, y = _data(rng, n=15)
    gp = GPRegressor(optimize=False, kernel=kind).fit(X, y)
    init = gp.kernel_
    sq = np.moveaxis((gp._Xs[:, None, :] - gp._Xs[None, :, :]) ** 2, 2, 0)
    args = (gp._Xs, gp._ys, True, init, sq)
    p0 = np.log([1.3, 0.8, 1.4, 1e-2])
    err = check_grad(lambda p: gp._neg_lml_and_grad(p, *args)[0], lambda p: gp._neg_lml_and_grad(p, *args)[1], p0)
    assert err < 1e-4


def test_optimization_improves_marginal_likelihood(rng):
    X, y = _data(rng, n=40)
    fixed = GPRegressor(optimize=False).fit(X, y)
    fitted = GPRegressor(n_restarts=3).fit(X, y)
    assert fitted.log_marginal_likelihood() >= fixed.log_marginal_likelihood() - 1e-9


def test_interpolates_noise_free_data(rng):
    X = np.linspace(0, 1, 8)[:, None]
    y = np.cos(3 * X[:, 0])
    gp = GPRegressor(noise_variance=1e-10, optimize_noise=False).fit(X, y)
    m, v = gp.predict_var(X)
    np.testing.assert_allclose(m, y, atol=1e-4)
    assert np.all(v < 1e-6)


def test_far_field_reverts_to_prior(rng):
    X = rng.uniform(0, 1, (20, 1))
    gp = GPRegressor(optimize=False).fit(X, X[:, 0])
    m, v = gp.predict_var([[100.0]])
    assert m[0] == pytest.approx(gp.y_mean_, abs=1e-8)
    assert v[0] == pytest.approx(gp.kernel_.signal_variance * gp.y_scale_**2, rel=1e-8)


def test_sample_functions_moments_and_seed(rng):
    X, y = _data(rng, n=10)
    gp = GPRegressor(optimize=False, noise_variance=1e-4).fit(X, y)
    Xq = rng.uniform(-2, 3, (5, 2))
    a = gp.sample_functions(Xq, 4000, seed=3)
    np.testing.assert_array_equal(a, gp.sample_functions(Xq, 4000, seed=3))
    mean, cov = gp.predict(Xq, return_cov=True)
    np.testing.assert_allclose(a.mean(0), mean, atol=5 * np.sqrt(np.diag(cov).max() / 4000) + 1e-9)
    np.testing.assert_allclose(np.cov(a.T), cov, atol=0.1 * np.diag(cov).max() + 1e-9)


def test_sample_functions_duplicate_points(rng):
    X, y = _data(rng, n=10)
    gp = GPRegressor(optimize=False).fit(X, y)
    Xq = np.repeat(X[:1] + 0.1, 3, axis=0)
    draws = gp.sample_functions(Xq, 50, seed=0)
    np.testing.assert_allclose(draws[:, 0], draws[:, 1], atol=1e-6)


def test_input_transform_matches_pretransformed_inputs(rng):
    X = rng.uniform(1, 100, (20, 1))
    y = np.log(X[:, 0])
    a = GPRegressor(optimize=False, input_transform=np.log).fit(X, y)
    b = GPRegressor(optimize=False).fit(np.log(X), y)
    Xq = np.array([[3.0], [50.0]])
    np.testing.assert_allclose(a.predict(Xq), b.predict(np.log(Xq)), rtol=1e-12)
    np.testing.assert_array_equal(a.X_train_, X)


def test_validation():
    with pytest.raises(ValidationError):
        KernelConfig(signal_variance=-1.0)
    with pytest.raises(ValidationError):
        KernelConfig(lengthscales=(1.0, 0.0))
    with pytest.raises(ValidationError):
        KernelConfig(lengthscales=(1.0, 2.0)).for_dimension(3)
    gp = GPRegressor(optimize=False).fit(np.zeros((3, 2)) + np.arange(3)[:, None], [0.0, 1.0, 2.0])
    with pytest.raises(ValidationError):
        gp.predict(np.zeros((1, 3)))
    with pytest.raises(ValidationError):
        GPRegressor().fit([[np.nan]], [1.0])
    with pytest.raises(ValidationError):
        stationary_kernel(np.zeros((1, 1)), np.zeros((1, 1)), 1.0, [1.0], "cubic")


def test_cholesky_jitter_escalates_then_fails():
    K = np.ones((3, 3))
    L, jitter = _cholesky_with_jitter(K, 1.0)
    assert jitter > 0
    with pytest.raises(NumericalError):
        _cholesky_with_jitter(-np.eye(2), 1.0)
