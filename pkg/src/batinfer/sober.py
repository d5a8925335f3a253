"""Batch likelihood-free inference loop.

Each iteration fits a GP to the discrepancy dataset, draws a candidate pool,
picks a batch greedily (pick the best candidate, condition the GP on a
noise-free fantasy observation at its predictive mean, re-score, repeat),
evaluates the forward model on the batch and lowers the threshold.

The greedy fantasy-conditioned batch is a simplification of SOBER's
kernel-recombination batch construction; it keeps the same acquisition
scores (GP-UCB, uncertainty sampling, integrated variance reduction).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from .analysis import WeightedPosteriorSamples, systematic_resample
from .exceptions import NumericalError, ValidationError
from .gp import KERNELS, GPRegressor
from .lfi import (
    DiscrepancyDataset,
    evaluate_discrepancies,
    log_pseudo_likelihood_from_moments,
    update_epsilon,
)
from .models import Dataset, ForwardModel, get_model

logger = logging.getLogger(__name__)

ACQUISITIONS = ("ucb", "max_uncertainty", "neg_integrated_posterior_variance")
LOG_FLOOR = 1e-12
_MAX_REJECTION_ROUNDS = 200


@dataclass(frozen=True)
class SoberConfig:
    n_initial: int = 16
    n_iterations: int = 7
    batch_size: int = 16
    candidate_pool_size: int | None = None  # None: 512 * d
    acquisition: str = "ucb"
    beta: float = 2.0
    seed: int = 0
    log_discrepancy: bool = False
    kernel: str = "matern52"
    oversample: int = 4
    local_fraction: float = 0.5
    n_restarts: int = 8
    max_opt_points: int | None = 256
    n_variance_nodes: int = 256
    workers: int = 1

    def __post_init__(self):
        for name in ("n_initial", "batch_size", "oversample", "n_restarts", "n_variance_nodes"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"sober.{name} must be >= 1")
        if self.n_iterations < 0:
            raise ValidationError("sober.n_iterations must be >= 0")
        if self.candidate_pool_size is not None and self.candidate_pool_size < self.batch_size:
            raise ValidationError("sober.candidate_pool_size must be >= batch_size")
        if self.acquisition not in ACQUISITIONS:
            raise ValidationError(f"sober.acquisition must be one of {ACQUISITIONS}, got {self.acquisition!r}")
        if self.beta < 0:
            raise ValidationError("sober.beta must be >= 0")
        if self.kernel not in KERNELS:
            raise ValidationError(f"sober.kernel must be one of {KERNELS}, got {self.kernel!r}")
        if not 0.0 <= self.local_fraction <= 1.0:
            raise ValidationError("sober.local_fraction must lie in [0, 1]")

    def pool_size(self, d: int) -> int:
        return int(self.candidate_pool_size or 512 * d)


@dataclass
class InferenceResult:
    discrepancies: DiscrepancyDataset
    gp: GPRegressor
    map: np.ndarray
    posterior_samples: WeightedPosteriorSamples
    evaluation_failures: int
    epsilon_trace: list = field(default_factory=list)
    log_discrepancy: bool = False
    details: dict = field(default_factory=dict)

    @property
    def epsilon(self) -> float:
        return self.discrepancies.epsilon

    @property
    def epsilon_gp(self) -> float:
        """Threshold on the scale the GP models (raw or log discrepancy)."""
        return to_gp_scale(self.epsilon, self.log_discrepancy)

    @property
    def n_evaluations(self) -> int:
        return len(self.discrepancies)


def to_gp_scale(delta, log_discrepancy: bool):
    if log_discrepancy:
        return np.log(np.maximum(delta, LOG_FLOOR))
    return delta


# ------------------------------------------------------------------ sampling
def sample_valid(prior, n: int, rng, valid=None) -> np.ndarray:
    """Prior draws restricted to rows accepted by ``valid`` (rejection)."""
    rng = np.random.default_rng(rng)
    if valid is None:
        return prior.sample(n, rng)
    kept, have = [], 0
    for _ in range(_MAX_REJECTION_ROUNDS):
        draw = prior.sample(max(n, 16), rng)
        draw = draw[np.asarray(valid(draw), dtype=bool)]
        kept.append(draw)
        have += draw.shape[0]
        if have >= n:
            return np.vstack(kept)[:n]
    raise ValidationError("the prior almost never satisfies the model's parameter constraints")


def initial_design(prior, n: int, seed=None, valid=None) -> np.ndarray:
    """I.i.d. prior draws, deterministic per seed."""
    if n < 1:
        raise ValidationError("initial design size must be >= 1")
    return sample_valid(prior, n, seed, valid)


# --------------------------------------------------------------- acquisition
def ucb_acquisition(posterior, theta, beta: float):
    """GP-UCB in the minimization convention: ``m(theta) - beta * sd(theta)``."""
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    mean, var = posterior.predict_var(np.atleast_2d(theta))
    out = mean - beta * np.sqrt(var)
    return float(out[0]) if single else out


class _FantasyState:
    """Posterior covariances of a fixed point set while noise-free fantasy
    observations are added one at a time (a pivoted partial Cholesky).

    Everything is kept in the GP's standardized target units.
    """

    def __init__(self, gp: GPRegressor, points: np.ndarray):
        self.gp = gp
        self.Zs = gp._standardize(points)
        self.V = gp.cross_factor(points)
        sv = gp.kernel_.signal_variance
        self.prior_var = np.maximum(sv - np.einsum("ij,ij->j", self.V, self.V), 0.0)
        self.var = self.prior_var.copy()
        self.U: list[np.ndarray] = []

    def column(self, i: int) -> np.ndarray:
        c = self.gp._k(self.Zs, self.Zs[i : i + 1])[:, 0] - self.V.T @ self.V[:, i]
        for u in self.U:
            c -= u * u[i]
        return c

    def condition(self, i: int) -> np.ndarray | None:
        c = self.column(i)
        v = c[i]
        if v <= 1e-14 * self.gp.kernel_.signal_variance:
            self.var[i] = 0.0
            return None
        u = c / np.sqrt(v)
        self.U.append(u)
        self.var = np.maximum(self.var - u * u, 0.0)
        self.var[i] = 0.0
        return u

    @property
    def raw_var(self) -> np.ndarray:
        return self.gp.y_scale_**2 * self.var


def select_batch(posterior, candidates, k: int, mode: str = "ucb", beta: float = 2.0, nodes=None, return_variances=False):
    """Greedy batch of ``k`` distinct candidate row indices.

    ``posterior`` is a fitted GP, or for ``max_uncertainty`` a sequence of
    GPs sharing input space whose variances are summed. ``nodes`` are the
    integration points for ``neg_integrated_posterior_variance`` (defaults
    to the candidates themselves).
    """
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    k = int(k)
    if k > cand.shape[0]:
        raise ValidationError(f"batch size {k} exceeds the {cand.shape[0]} candidates")
    if mode not in ACQUISITIONS:
        raise ValidationError(f"unknown acquisition mode {mode!r}")
    gps = list(posterior) if isinstance(posterior, (list, tuple)) else [posterior]
    if mode != "max_uncertainty" and len(gps) != 1:
        raise ValidationError(f"mode {mode!r} takes a single GP")
    chosen: list[int] = []
    taken = np.zeros(cand.shape[0], dtype=bool)

    if mode == "neg_integrated_posterior_variance":
        gp = gps[0]
        node_pts = cand if nodes is None else np.atleast_2d(np.asarray(nodes, dtype=float))
        m = cand.shape[0]
        state = _FantasyState(gp, np.vstack([cand, node_pts]))
        Vc, Vn = state.V[:, :m], state.V[:, m:]
        C = gp._k(state.Zs[m:], state.Zs[:m]) - Vn.T @ Vc  # nodes x candidates
        for _ in range(k):
            var_c = state.var[:m]
            with np.errstate(divide="ignore", invalid="ignore"):
                score = np.where(var_c > 1e-14, np.sum(C**2, axis=0) / var_c, 0.0)
            score[taken] = -np.inf
            i = int(np.argmax(score))
            chosen.append(i)
            taken[i] = True
            u = state.condition(i)
            if u is not None:
                C -= np.outer(u[m:], u[:m])
        final_var = state.raw_var[:m]
    else:
        states = [_FantasyState(gp, cand) for gp in gps]
        mean = gps[0].predict(cand) if mode == "ucb" else None
        for _ in range(k):
            if mode == "ucb":
                score = mean - beta * np.sqrt(states[0].raw_var)
                score[taken] = np.inf
                i = int(np.argmin(score))
            else:
                score = sum(s.raw_var for s in states)
                score[taken] = -np.inf
                i = int(np.argmax(score))
            chosen.append(i)
            taken[i] = True
            for s in states:
                s.condition(i)
        final_var = sum(s.raw_var for s in states)
    idx = np.array(chosen, dtype=int)
    return (idx, final_var) if return_variances else idx


# ---------------------------------------------------------------------- loop
def _fit_gp(dataset: DiscrepancyDataset, config: SoberConfig, previous: GPRegressor | None, seed: int, transform=None) -> GPRegressor:
    y = to_gp_scale(dataset.deltas, config.log_discrepancy)
    if previous is None:
        gp = GPRegressor(
            noise_variance=1e-6,
            n_restarts=config.n_restarts,
            max_opt_points=config.max_opt_points,
            random_state=seed,
            kernel=config.kernel,
            input_transform=transform,
        )
    else:
        # warm start: one ascent from the previous optimum plus one random restart
        k = previous.kernel_
        gp = GPRegressor(
            signal_variance=k.signal_variance,
            lengthscales=k.lengthscales,
            noise_variance=max(k.noise_variance, 1e-10),
            n_restarts=min(2, config.n_restarts),
            max_opt_points=config.max_opt_points,
            random_state=seed,
            max_iter=50,
            kernel=config.kernel,
            input_transform=transform,
        )
    return gp.fit(dataset.thetas, y)


def local_candidates(prior, gp: GPRegressor, center, n: int, rng, valid=None, min_scale: float = 0.01) -> np.ndarray:
    """Gaussian perturbations of ``center`` in transformed coordinates.

    Each candidate gets its own radius, log-uniform between ``min_scale``
    and 1, so the cloud mixes fine local moves with wide jumps. Along
    dimension ``i`` the radius is multiplied by the GP's input scale,
    stretched by the lengthscale relative to their geometric mean (the
    discrepancy barely depends on long-lengthscale directions) and capped at
    the prior scale.
    """
    ls = np.asarray(gp.kernel_.lengthscales)
    stretch = ls / np.exp(np.mean(np.log(ls)))
    spread = np.minimum(gp.x_scale_ * stretch, np.sqrt(np.diag(prior.transformed_cov)))
    z0 = prior.to_transformed(np.atleast_2d(center))
    kept, have = [], 0
    for _ in range(_MAX_REJECTION_ROUNDS):
        radius = min_scale ** rng.random((n, 1))
        draw = prior.from_transformed(z0 + rng.standard_normal((n, z0.shape[1])) * spread * radius)
        ok = np.asarray(prior.in_support(draw), dtype=bool)
        if valid is not None:
            ok &= np.asarray(valid(draw), dtype=bool)
        kept.append(draw[ok])
        have += int(ok.sum())
        if have >= n:
            break
    return np.vstack(kept)[:n]


def _valid_for(model: ForwardModel, prior):
    def valid(thetas):
        return model.valid(thetas) & np.asarray(prior.in_support(thetas), dtype=bool)

    return valid


def _log_weights(gp, pool, eps_gp):
    mean, var = gp.predict_var(pool)
    return log_pseudo_likelihood_from_moments(mean, var, eps_gp)


def _normalized_from_log(logw: np.ndarray) -> np.ndarray:
    finite = np.isfinite(logw)
    if not np.any(finite):
        return np.full(logw.shape, 1.0 / logw.size)
    w = np.exp(logw - logw[finite].max())
    return w / w.sum()


def run(model: ForwardModel, data: Dataset, prior, config: SoberConfig | None = None) -> InferenceResult:
    """Run the batch inference loop and return the fitted surrogate, MAP and
    importance-weighted posterior samples."""
    config = config or SoberConfig()
    if model.dimension != prior.dimension:
        raise ValidationError(f"model {model.name} has {model.dimension} parameters, prior has {prior.dimension}")
    d = prior.dimension
    pool_size = config.pool_size(d)
    if pool_size < config.batch_size:
        raise ValidationError("candidate pool smaller than the batch size")
    rng = np.random.default_rng(config.seed)
    valid = _valid_for(model, prior)
    observed = data.y

    def simulate(theta):
        return model.evaluate(theta, data.x)

    X0 = initial_design(prior, config.n_initial, rng, valid)
    records, failures = evaluate_discrepancies(simulate, X0, observed, config.workers)
    if not records:
        raise NumericalError("every evaluation of the initial design failed")
    dataset = update_epsilon(DiscrepancyDataset(), records)
    transform = prior.to_transformed
    gp = _fit_gp(dataset, config, None, config.seed, transform)
    trace = [dataset.epsilon]
    _log_progress(0, dataset, failures)

    nodes = None
    if config.acquisition == "neg_integrated_posterior_variance":
        nodes = sample_valid(prior, config.n_variance_nodes, rng, valid)

    for it in range(1, config.n_iterations + 1):
        n_local = int(round(config.local_fraction * pool_size))
        n_global = pool_size - n_local
        parts = []
        if n_global and it <= 2:
            parts.append(sample_valid(prior, n_global, rng, valid))
        elif n_global:
            wide = sample_valid(prior, config.oversample * n_global, rng, valid)
            w = _normalized_from_log(_log_weights(gp, wide, to_gp_scale(dataset.epsilon, config.log_discrepancy)))
            parts.append(wide[systematic_resample(w, n_global, rng)])
        if n_local:
            parts.append(local_candidates(prior, gp, dataset.best.theta, n_local, rng, valid))
        pool = np.vstack(parts)
        idx = select_batch(gp, pool, config.batch_size, config.acquisition, config.beta, nodes)
        new, failed = evaluate_discrepancies(simulate, pool[idx], observed, config.workers)
        failures += failed
        if not new:
            raise NumericalError(f"every evaluation in batch {it} failed")
        dataset = update_epsilon(dataset, new)
        gp = _fit_gp(dataset, config, gp, config.seed + it, transform)
        trace.append(dataset.epsilon)
        _log_progress(it, dataset, failures)

    final_pool = sample_valid(prior, config.oversample * pool_size, rng, valid)
    eps_gp = to_gp_scale(dataset.epsilon, config.log_discrepancy)
    weights = _normalized_from_log(_log_weights(gp, final_pool, eps_gp))
    posterior = WeightedPosteriorSamples(final_pool, weights, tuple(prior.names))
    map_candidates = np.vstack([final_pool, dataset.thetas])
    map_point = map_candidates[int(np.argmin(gp.predict(map_candidates)))]
    return InferenceResult(
        discrepancies=dataset,
        gp=gp,
        map=map_point,
        posterior_samples=posterior,
        evaluation_failures=failures,
        epsilon_trace=trace,
        log_discrepancy=config.log_discrepancy,
    )


def _log_progress(it: int, dataset: DiscrepancyDataset, failures: int):
    logger.info(
        "iter=%d eps=%.6g best=%.6g evals=%d failures=%d",
        it,
        dataset.epsilon,
        float(dataset.deltas.min()),
        len(dataset),
        failures,
    )


class SoberInference(BaseEstimator):
    """Estimator wrapper around :func:`run`.

    ``fit(X, y)`` takes the observation grid ``X`` (1-d) and the observed
    outputs ``y``; ``predict(X)`` evaluates the forward model at the MAP.

    >>> from batinfer.models import default_prior
    >>> est = SoberInference("linear", default_prior("linear"), n_iterations=1, batch_size=4)
    >>> est.fit([1.0, 2.0], [1.0, 2.0]).map_.shape
    (1,)
    """

    def __init__(
        self,
        model="linear",
        prior=None,
        n_initial=16,
        n_iterations=7,
        batch_size=16,
        candidate_pool_size=None,
        acquisition="ucb",
        beta=2.0,
        log_discrepancy=False,
        random_state=0,
        workers=1,
    ):
        self.model = model
        self.prior = prior
        self.n_initial = n_initial
        self.n_iterations = n_iterations
        self.batch_size = batch_size
        self.candidate_pool_size = candidate_pool_size
        self.acquisition = acquisition
        self.beta = beta
        self.log_discrepancy = log_discrepancy
        self.random_state = random_state
        self.workers = workers

    def _forward(self) -> ForwardModel:
        return get_model(self.model) if isinstance(self.model, str) else self.model

    def fit(self, X, y):
        from .models import default_prior

        model = self._forward()
        prior = self.prior if self.prior is not None else default_prior(model.name)
        config = SoberConfig(
            n_initial=self.n_initial,
            n_iterations=self.n_iterations,
            batch_size=self.batch_size,
            candidate_pool_size=self.candidate_pool_size,
            acquisition=self.acquisition,
            beta=self.beta,
            seed=self.random_state,
            log_discrepancy=self.log_discrepancy,
            workers=self.workers,
        )
        data = Dataset(np.asarray(X, dtype=float).reshape(-1), np.asarray(y, dtype=float).reshape(-1))
        self.result_ = run(model, data, prior, config)
        self.map_ = self.result_.map
        self.epsilon_ = self.result_.epsilon
        self.gp_ = self.result_.gp
        self.posterior_samples_ = self.result_.posterior_samples
        return self

    def predict(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "map_")
        return self._forward().evaluate(self.map_, np.asarray(X, dtype=float).reshape(-1))


def with_seed(config: SoberConfig, seed: int) -> SoberConfig:
    return replace(config, seed=int(seed))
