"""Global inverse surrogate: regressors from model outputs back to parameters.

Training is active learning. Candidate parameter points are drawn from the
prior and pushed through the forward model; a batch is chosen where the
inverse GPs are most uncertain about the resulting outputs, with greedy
fantasy conditioning across the batch. Each parameter gets its own GP on
targets standardized by the prior (transformed) location and scale, so the
summed variances are comparable across parameters.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import BatinferError, NumericalError, ValidationError
from .gp import KERNELS, GPRegressor
from .models import ForwardModel
from .sober import sample_valid, select_batch

logger = logging.getLogger(__name__)

#: fixed noise of the inverse GPs (standardized units); the forward map is deterministic
INVERSE_NOISE = 1e-8


@dataclass(frozen=True)
class GisConfig:
    n_initial: int = 128
    n_iterations: int = 3
    batch_size: int = 128
    seed: int = 0
    candidate_pool_size: int | None = None  # None: 512 * d
    kernel: str = "se"
    n_restarts: int = 4
    workers: int = 1

    def __post_init__(self):
        for name in ("n_initial", "batch_size", "n_restarts"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"gis.{name} must be >= 1")
        if self.n_iterations < 0:
            raise ValidationError("gis.n_iterations must be >= 0")
        if self.kernel not in KERNELS:
            raise ValidationError(f"gis.kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.candidate_pool_size is not None and self.candidate_pool_size < self.batch_size:
            raise ValidationError("gis.candidate_pool_size must be >= batch_size")

    def pool_size(self, d: int) -> int:
        return int(self.candidate_pool_size or 512 * d)


def forward_outputs(model: ForwardModel, thetas, workers: int = 1) -> tuple[np.ndarray, np.ndarray, int]:
    """Forward model at each row. Returns ``(thetas_ok, outputs, n_failed)``
    with failed or non-finite rows dropped."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))

    def one(theta):
        try:
            y = np.asarray(model.evaluate(theta), dtype=float).reshape(-1)
        except (BatinferError, ArithmeticError, ValueError) as exc:
            logger.debug("forward evaluation failed at %s: %s", theta, exc)
            return None
        return y if np.all(np.isfinite(y)) else None

    if workers > 1 and thetas.shape[0] > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(one, list(thetas)))
    else:
        outs = [one(t) for t in thetas]
    ok = np.array([o is not None for o in outs], dtype=bool)
    if not np.any(ok):
        return thetas[:0], np.empty((0, 0)), len(outs)
    return thetas[ok], np.vstack([o for o in outs if o is not None]), int((~ok).sum())


class InverseSurrogate:
    """Independent GPs mapping an observation vector to each parameter."""

    def __init__(self, prior, thetas, outputs, config: GisConfig, failures: int = 0, gps=None):
        self.prior = prior
        self.thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        self.outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
        self.config = config
        self.failures = int(failures)
        self._loc = np.asarray(prior.transformed_mean, dtype=float)
        self._scale = np.sqrt(np.diag(prior.transformed_cov))
        self.gps = gps if gps is not None else self._fit(None)

    @property
    def n_outputs(self) -> int:
        return self.outputs.shape[1]

    def _targets(self) -> np.ndarray:
        return (self.prior.to_transformed(self.thetas) - self._loc) / self._scale

    def _fit(self, previous) -> list[GPRegressor]:
        u = self._targets()
        gps = []
        for j in range(u.shape[1]):
            kw = dict(
                noise_variance=INVERSE_NOISE,
                optimize_noise=False,
                n_restarts=self.config.n_restarts,
                random_state=self.config.seed + j,
                kernel=self.config.kernel,
                max_opt_points=512,
            )
            if previous is not None:
                k = previous[j].kernel_
                kw.update(signal_variance=k.signal_variance, lengthscales=k.lengthscales, n_restarts=2)
            gps.append(GPRegressor(**kw).fit(self.outputs, u[:, j]))
        return gps

    def extend(self, thetas, outputs, failures: int = 0) -> "InverseSurrogate":
        return InverseSurrogate(
            self.prior,
            np.vstack([self.thetas, thetas]),
            np.vstack([self.outputs, outputs]),
            self.config,
            self.failures + failures,
            gps=None,
        )._refit_from(self.gps)

    def _refit_from(self, previous):
        self.gps = self._fit(previous)
        return self

    def predict_standardized(self, y) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances of the standardized targets, shape ``(n, d)``."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[1] != self.n_outputs:
            raise ValidationError(f"observation has {y.shape[1]} values, surrogate expects {self.n_outputs}")
        mv = [gp.predict_var(y) for gp in self.gps]
        return np.column_stack([m for m, _ in mv]), np.column_stack([v for _, v in mv])

    def predict(self, y) -> tuple[np.ndarray, np.ndarray]:
        """Parameter mean and diagonal covariance for one observation.

        For log-transformed parameters the Gaussian lives in log space; the
        reported mean is the back-transformed median and the variance is
        propagated to first order.
        """
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        m, v = self.predict_standardized(np.atleast_2d(y))
        z = self._loc + self._scale * m
        var_z = self._scale**2 * v
        theta = self.prior.from_transformed(z)
        jac = np.where(self.prior.is_log, theta, 1.0)
        var = jac**2 * var_z
        if single:
            return theta[0], np.diag(var[0])
        return theta, np.stack([np.diag(r) for r in var])

    def total_variance(self, y) -> float:
        """Summed standardized predictive variance over ``y`` rows."""
        return float(self.predict_standardized(y)[1].sum())

    def write_archive(self, path, names_out=None):
        names_out = names_out or [f"y_{j}" for j in range(self.n_outputs)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(self.prior.names) + list(names_out))
            for t, y in zip(self.thetas, self.outputs):
                w.writerow([repr(float(v)) for v in t] + [repr(float(v)) for v in y])


def train(model: ForwardModel, prior, config: GisConfig | None = None) -> InverseSurrogate:
    """Active-learning loop with max-uncertainty batches in observation space."""
    config = config or GisConfig()
    if model.dimension != prior.dimension:
        raise ValidationError(f"model {model.name} has {model.dimension} parameters, prior has {prior.dimension}")
    rng = np.random.default_rng(config.seed)

    def valid(t):
        return np.asarray(prior.in_support(t), dtype=bool) & model.valid(t)

    X0 = sample_valid(prior, config.n_initial, rng, valid)
    th, Y, failed = forward_outputs(model, X0, config.workers)
    if th.shape[0] < 2:
        raise NumericalError("fewer than two forward evaluations of the initial design succeeded")
    surrogate = InverseSurrogate(prior, th, Y, config, failed)
    logger.info("iter=0 evals=%d failures=%d", len(surrogate.thetas), surrogate.failures)
    for it in range(1, config.n_iterations + 1):
        pool = sample_valid(prior, config.pool_size(prior.dimension), rng, valid)
        pth, pY, pfail = forward_outputs(model, pool, config.workers)
        if pth.shape[0] < config.batch_size:
            raise NumericalError(f"only {pth.shape[0]} candidates of iteration {it} could be evaluated")
        idx = select_batch(surrogate.gps, pY, config.batch_size, "max_uncertainty")
        surrogate = surrogate.extend(pth[idx], pY[idx], pfail)
        logger.info("iter=%d evals=%d failures=%d", it, len(surrogate.thetas), surrogate.failures)
    return surrogate


def coverage(surrogate: InverseSurrogate, thetas, outputs, k: float = 2.0) -> float:
    """Fraction of (row, parameter) pairs whose true value lies within ``k``
    predictive standard deviations of the predicted mean, measured on the
    standardized (transformed) scale."""
    m, v = surrogate.predict_standardized(outputs)
    u = (surrogate.prior.to_transformed(np.atleast_2d(thetas)) - surrogate._loc) / surrogate._scale
    return float(np.mean(np.abs(u - m) <= k * np.sqrt(v)))


class InverseSurrogateEstimator(BaseEstimator):
    """Estimator wrapper: ``fit()`` trains by active learning, ``predict(Y)``
    returns parameter means."""

    def __init__(self, model="pulse_toy", prior=None, n_initial=128, n_iterations=3, batch_size=128, random_state=0, workers=1):
        self.model = model
        self.prior = prior
        self.n_initial = n_initial
        self.n_iterations = n_iterations
        self.batch_size = batch_size
        self.random_state = random_state
        self.workers = workers

    def fit(self, X=None, y=None):
        from .models import default_prior, get_model

        model = get_model(self.model) if isinstance(self.model, str) else self.model
        prior = self.prior if self.prior is not None else default_prior(model.name)
        cfg = GisConfig(self.n_initial, self.n_iterations, self.batch_size, self.random_state, workers=self.workers)
        self.surrogate_ = train(model, prior, cfg)
        return self

    def predict(self, Y):
        check_is_fitted(self, "surrogate_")
        return self.surrogate_.predict(np.atleast_2d(np.asarray(Y, dtype=float)))[0]
