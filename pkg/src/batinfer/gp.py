"""Exact Gaussian-process regression with stationary ARD kernels
(squared-exponential, Matern 3/2 and Matern 5/2).

The regressor standardizes inputs (per dimension) and, by default, targets
before fitting. Kernel hyperparameters live in the standardized space;
predictions, samples and the log marginal likelihood are reported in raw
target units.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.stats import qmc
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import NumericalError, ValidationError

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
_CHUNK = 4096

# log-space search box for hyperparameters (standardized units)
_LOG_SV_BOUNDS = (np.log(1e-2), np.log(1e2))
_LOG_LS_BOUNDS = (np.log(1e-2), np.log(1e2))
_LOG_NOISE_BOUNDS = (np.log(1e-10), np.log(1.0))


@dataclass(frozen=True)
class KernelConfig:
    """Hyperparameters of a stationary ARD kernel."""

    signal_variance: float = 1.0
    lengthscales: tuple = (1.0,)
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        if self.signal_variance <= 0 or not np.isfinite(self.signal_variance):
            raise ValidationError(f"signal_variance must be positive, got {self.signal_variance}")
        if any(v <= 0 or not np.isfinite(v) for v in ls):
            raise ValidationError(f"lengthscales must be positive, got {ls}")
        if self.noise_variance < 0:
            raise ValidationError(f"noise_variance must be >= 0, got {self.noise_variance}")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    def for_dimension(self, d: int) -> "KernelConfig":
        ls = self.lengthscales
        if len(ls) == 1 and d > 1:
            ls = ls * d
        if len(ls) != d:
            raise ValidationError(f"kernel has {len(ls)} lengthscales for {d} input dimensions")
        return KernelConfig(self.signal_variance, ls, self.noise_variance)


KERNELS = ("se", "matern32", "matern52")
_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)


def _profile(r2: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Unit-variance kernel value ``k(r)`` and ``h(r)`` with
    ``dk / d log(l_i) = h(r) * (x_i - x'_i)**2 / l_i**2``."""
    if kind == "se":
        k = np.exp(-0.5 * r2)
        return k, k
    r = np.sqrt(r2)
    if kind == "matern32":
        e = np.exp(-_SQRT3 * r)
        return (1.0 + _SQRT3 * r) * e, 3.0 * e
    if kind == "matern52":
        e = np.exp(-_SQRT5 * r)
        return (1.0 + _SQRT5 * r + 5.0 / 3.0 * r2) * e, 5.0 / 3.0 * (1.0 + _SQRT5 * r) * e
    raise ValidationError(f"unknown kernel {kind!r}; choose from {KERNELS}")


def stationary_kernel(A: np.ndarray, B: np.ndarray, signal_variance: float, lengthscales, kind: str = "se") -> np.ndarray:
    """ARD kernel matrix: squared-exponential or Matern (nu = 3/2, 5/2)."""
    ls = np.asarray(lengthscales, dtype=float)
    return signal_variance * _profile(cdist(A / ls, B / ls, "sqeuclidean"), kind)[0]


def se_kernel(A: np.ndarray, B: np.ndarray, signal_variance: float, lengthscales) -> np.ndarray:
    return stationary_kernel(A, B, signal_variance, lengthscales, "se")


def _cholesky_with_jitter(K: np.ndarray, base: float, start: float = 1e-10, stop: float = 1e-4):
    """Cholesky factor of ``K``, adding ``base * jitter`` to the diagonal on failure."""
    n = K.shape[0]
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = start
    while jitter <= stop * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + base * jitter * np.eye(n)), base * jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"covariance matrix ({n}x{n}) is not positive definite even with jitter {stop:g} x {base:g}"
    )


class GPRegressor(RegressorMixin, BaseEstimator):
    """Gaussian-process regressor with hyperparameters fitted by maximum
    marginal likelihood.

    Parameters
    ----------
    signal_variance, lengthscales, noise_variance : float
        Initial kernel configuration, in standardized units. ``lengthscales``
        may be a scalar (shared) or one value per input dimension.
    optimize : bool
        Maximize the log marginal likelihood over the hyperparameters.
    optimize_noise : bool
        Include the noise variance in the optimization. A zero initial noise
        variance is always kept at zero.
    n_restarts : int
        Number of local ascents; the first starts from the initial
        configuration, the rest from a Latin hypercube in log space.
    normalize_y : bool
        Standardize targets to zero mean and unit variance.
    max_opt_points : int or None
        Optimize hyperparameters on a random subset of at most this many
        points. The final model always conditions on all data.
    random_state : int
        Seed for restarts and subsetting.
    max_iter : int
        Iteration cap of each local ascent.
    kernel : {"se", "matern32", "matern52"}
        Covariance family. Matern kernels suit surfaces with kinks, such as
        a discrepancy near its minimum.
    input_transform : callable or None
        Map applied to raw inputs before standardization (for example the
        log transform of positive parameters). All public methods take raw
        inputs.
    """

    def __init__(
        self,
        signal_variance=1.0,
        lengthscales=1.0,
        noise_variance=1e-6,
        optimize=True,
        optimize_noise=True,
        n_restarts=8,
        normalize_y=True,
        max_opt_points=None,
        random_state=0,
        max_iter=200,
        kernel="se",
        input_transform=None,
    ):
        self.signal_variance = signal_variance
        self.lengthscales = lengthscales
        self.noise_variance = noise_variance
        self.optimize = optimize
        self.optimize_noise = optimize_noise
        self.n_restarts = n_restarts
        self.normalize_y = normalize_y
        self.max_opt_points = max_opt_points
        self.random_state = random_state
        self.max_iter = max_iter
        self.kernel = kernel
        self.input_transform = input_transform

    # ------------------------------------------------------------------ fit
    def fit(self, X, y):
        try:
            X, y = check_X_y(X, y, y_numeric=True, ensure_min_samples=1)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        n, d = X.shape
        self.n_features_in_ = d
        self.X_train_ = X.copy()
        self.y_train_ = y.astype(float).copy()
        X = self._warp(X)

        self.x_mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.x_scale_ = np.where(scale > 0, scale, 1.0)
        if self.normalize_y:
            self.y_mean_ = float(y.mean())
            ys = float(y.std())
            self.y_scale_ = ys if ys > 0 else 1.0
        else:
            self.y_mean_, self.y_scale_ = 0.0, 1.0
        self._Xs = (X - self.x_mean_) / self.x_scale_
        self._ys = (y - self.y_mean_) / self.y_scale_

        init = KernelConfig(
            self.signal_variance, tuple(np.atleast_1d(self.lengthscales)), self.noise_variance
        ).for_dimension(d)
        if self.optimize and n >= 2:
            self.kernel_ = self._optimize(init)
        else:
            self.kernel_ = init
        self._factorize()
        return self

    def _warp(self, X: np.ndarray) -> np.ndarray:
        if self.input_transform is None:
            return X
        return np.asarray(self.input_transform(X), dtype=float).reshape(X.shape)

    def _pack(self, k: KernelConfig, fit_noise: bool) -> np.ndarray:
        p = [np.log(k.signal_variance), *np.log(k.lengthscales)]
        if fit_noise:
            p.append(np.log(k.noise_variance))
        return np.array(p)

    def _unpack(self, p: np.ndarray, fit_noise: bool, init: KernelConfig) -> KernelConfig:
        d = len(init.lengthscales)
        noise = float(np.exp(p[d + 1])) if fit_noise else init.noise_variance
        return KernelConfig(float(np.exp(p[0])), tuple(np.exp(p[1 : d + 1])), noise)

    def _neg_lml_and_grad(self, p, Xs, ys, fit_noise, init, sqdists):
        d = Xs.shape[1]
        sv = np.exp(p[0])
        ls = np.exp(p[1 : d + 1])
        noise = np.exp(p[d + 1]) if fit_noise else init.noise_variance
        n = Xs.shape[0]
        scaled = sqdists / (ls**2)[:, None, None]
        prof, h = _profile(scaled.sum(axis=0), self.kernel)
        Kf = sv * prof
        H = sv * h
        K = Kf + (noise + 1e-10 * sv) * np.eye(n)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(p)
        alpha = cho_solve((L, True), ys)
        nll = 0.5 * ys @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * _LOG_2PI
        Kinv, info = dpotri(L, lower=1)
        if info != 0:
            return 1e25, np.zeros_like(p)
        Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
        W = np.outer(alpha, alpha) - Kinv
        grad = np.empty_like(p)
        grad[0] = 0.5 * np.sum(W * Kf)
        grad[1 : d + 1] = 0.5 * (scaled.reshape(d, -1) @ (W * H).reshape(-1))
        if fit_noise:
            grad[d + 1] = 0.5 * noise * np.trace(W)
        return float(nll), -grad

    def _optimize(self, init: KernelConfig) -> KernelConfig:
        rng = np.random.default_rng(self.random_state)
        Xs, ys = self._Xs, self._ys
        if self.max_opt_points is not None and Xs.shape[0] > self.max_opt_points:
            idx = np.sort(rng.choice(Xs.shape[0], int(self.max_opt_points), replace=False))
            Xs, ys = Xs[idx], ys[idx]
        d = Xs.shape[1]
        fit_noise = bool(self.optimize_noise and init.noise_variance > 0)
        sqdists = np.moveaxis((Xs[:, None, :] - Xs[None, :, :]) ** 2, 2, 0)
        bounds = [_LOG_SV_BOUNDS] + [_LOG_LS_BOUNDS] * d
        if fit_noise:
            bounds.append(_LOG_NOISE_BOUNDS)
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])

        starts = [np.clip(self._pack(init, fit_noise), lo, hi)]
        if self.n_restarts > 1:
            lhs = qmc.LatinHypercube(d=len(bounds), seed=rng).random(self.n_restarts - 1)
            starts.extend(lo + lhs * (hi - lo))

        best_p, best_val = None, np.inf
        init_val, _ = self._neg_lml_and_grad(self._pack(init, fit_noise), Xs, ys, fit_noise, init, sqdists)
        for x0 in starts:
            res = minimize(
                self._neg_lml_and_grad,
                x0,
                args=(Xs, ys, fit_noise, init, sqdists),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"ftol": 1e-6, "maxiter": int(self.max_iter)},
            )
            if np.isfinite(res.fun) and res.fun < best_val:
                best_val, best_p = res.fun, res.x
        if best_p is None or best_val > init_val:
            logger.debug("hyperparameter optimization did not improve on the initial configuration")
            return init
        return self._unpack(best_p, fit_noise, init)

    def _factorize(self):
        k = self.kernel_
        K = stationary_kernel(self._Xs, self._Xs, k.signal_variance, k.lengthscales, self.kernel)
        K[np.diag_indices_from(K)] += k.noise_variance
        self.L_, self.jitter_ = _cholesky_with_jitter(K, k.signal_variance)
        if self.jitter_ > 0:
            logger.debug("GP factorization needed jitter %.3g", self.jitter_)
        self.alpha_ = cho_solve((self.L_, True), self._ys)

    # -------------------------------------------------------------- predict
    def _standardize(self, X) -> np.ndarray:
        check_is_fitted(self, "L_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(
                f"query has {X.shape[1]} dimensions, model was trained on {self.n_features_in_}"
            )
        return (self._warp(X) - self.x_mean_) / self.x_scale_

    def _k(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return stationary_kernel(A, B, self.kernel_.signal_variance, self.kernel_.lengthscales, self.kernel)

    def cross_factor(self, X) -> np.ndarray:
        """Whitened cross-covariance ``L^{-1} k(X_train, X)`` (standardized units).

        The posterior covariance between query sets A and B is
        ``y_scale**2 * (k(A, B) - V_A.T @ V_B)``.
        """
        Zs = self._standardize(X)
        return solve_triangular(self.L_, self._k(self._Xs, Zs), lower=True, check_finite=False)

    def prior_covariance(self, A, B) -> np.ndarray:
        """Kernel matrix between raw query sets, in standardized target units."""
        return self._k(self._standardize(A), self._standardize(B))

    def predict(self, X, return_std=False, return_cov=False):
        """Predictive mean, optionally with standard deviation or covariance."""
        Zs = self._standardize(X)
        if return_cov:
            Ks = self._k(self._Xs, Zs)
            mean = Ks.T @ self.alpha_
            V = solve_triangular(self.L_, Ks, lower=True, check_finite=False)
            cov = self._k(Zs, Zs) - V.T @ V
            cov = 0.5 * (cov + cov.T)
            di = np.diag_indices_from(cov)
            cov[di] = np.maximum(cov[di], 0.0)
            return self.y_mean_ + self.y_scale_ * mean, self.y_scale_**2 * cov
        means, variances = [], []
        sv = self.kernel_.signal_variance
        for start in range(0, Zs.shape[0], _CHUNK):
            block = Zs[start : start + _CHUNK]
            Ks = self._k(self._Xs, block)
            means.append(Ks.T @ self.alpha_)
            if return_std:
                V = solve_triangular(self.L_, Ks, lower=True, check_finite=False)
                variances.append(np.maximum(sv - np.einsum("ij,ij->j", V, V), 0.0))
        mean = self.y_mean_ + self.y_scale_ * np.concatenate(means)
        if return_std:
            return mean, self.y_scale_ * np.sqrt(np.concatenate(variances))
        return mean

    def predict_var(self, X) -> tuple[np.ndarray, np.ndarray]:
        mean, std = self.predict(X, return_std=True)
        return mean, std**2

    def log_marginal_likelihood(self) -> float:
        """Log marginal likelihood of the raw targets under the fitted model."""
        check_is_fitted(self, "L_")
        n = self._ys.shape[0]
        std_lml = -0.5 * self._ys @ self.alpha_ - np.log(np.diag(self.L_)).sum() - 0.5 * n * _LOG_2PI
        return float(std_lml - n * np.log(self.y_scale_))

    def sample_functions(self, X, n_draws: int, seed=None) -> np.ndarray:
        """Joint draws from the predictive distribution, shape ``(n_draws, m)``."""
        mean, cov = self.predict(X, return_cov=True)
        base = max(float(np.mean(np.diag(cov))), np.finfo(float).tiny)
        try:
            L, _ = _cholesky_with_jitter(cov, base, start=1e-12, stop=1e-6)
        except NumericalError:
            # near-duplicate query points: symmetric square root of the PSD part
            vals, vecs = np.linalg.eigh(cov)
            L = vecs * np.sqrt(np.clip(vals, 0.0, None))
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((int(n_draws), mean.shape[0]))
        return mean + z @ L.T

    sample_y = sample_functions


# Functional aliases mirroring the operation names used in the docs.
def fit(inputs, targets, init: KernelConfig | None = None, **kwargs) -> GPRegressor:
    init = init or KernelConfig()
    return GPRegressor(
        signal_variance=init.signal_variance,
        lengthscales=init.lengthscales,
        noise_variance=init.noise_variance,
        **kwargs,
    ).fit(inputs, targets)


def predict(model: GPRegressor, query):
    return model.predict(query, return_cov=True)


def log_marginal_likelihood(model: GPRegressor) -> float:
    return model.log_marginal_likelihood()


def sample_functions(model: GPRegressor, query, n_draws: int, seed=None) -> np.ndarray:
    return model.sample_functions(query, n_draws, seed)
