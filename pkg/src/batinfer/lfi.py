"""Discrepancies, the adaptive threshold and the GP pseudo-likelihood.

The pseudo-likelihood of a parameter point is the probability, under the
GP model of the discrepancy, that the discrepancy falls below the current
threshold ``epsilon``. The threshold is the smallest discrepancy observed
so far.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

from .exceptions import BatinferError, EvaluationError, ValidationError

logger = logging.getLogger(__name__)

#: below this predictive variance the pseudo-likelihood is an indicator
VARIANCE_FLOOR = 1e-12
SIGMA_FLOOR = 1e-12


def rmse_discrepancy(simulated, observed) -> float:
    """Root-mean-squared error between simulated and observed outputs.

    Raises :class:`EvaluationError` if the simulation produced non-finite
    values, so callers can count it as a failed evaluation.
    """
    sim = np.asarray(simulated, dtype=float).reshape(-1)
    obs = np.asarray(observed, dtype=float).reshape(-1)
    if sim.shape != obs.shape:
        raise ValidationError(f"length mismatch: simulated {sim.size} vs observed {obs.size}")
    if sim.size == 0:
        raise ValidationError("cannot compute a discrepancy on empty data")
    if not np.all(np.isfinite(obs)):
        raise ValidationError("observed data contain non-finite values")
    if not np.all(np.isfinite(sim)):
        raise EvaluationError("simulator returned non-finite output")
    with np.errstate(over="ignore"):
        delta = float(np.sqrt(np.mean((sim - obs) ** 2)))
    if not np.isfinite(delta):
        raise EvaluationError("discrepancy overflowed")
    return delta


@dataclass(frozen=True)
class DiscrepancyRecord:
    theta: tuple
    delta: float

    def __post_init__(self):
        delta = float(self.delta)
        if not np.isfinite(delta) or delta < 0:
            raise ValidationError(f"discrepancy must be finite and non-negative, got {self.delta}")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "theta", tuple(float(v) for v in np.atleast_1d(self.theta)))


@dataclass(frozen=True)
class DiscrepancyDataset:
    """Ordered discrepancy records with the running threshold."""

    records: tuple = field(default_factory=tuple)
    epsilon: float = np.inf

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records], dtype=float)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([r.delta for r in self.records], dtype=float)

    def __len__(self):
        return len(self.records)

    @property
    def best(self) -> DiscrepancyRecord:
        if not self.records:
            raise ValidationError("empty discrepancy dataset has no best record")
        return self.records[int(np.argmin(self.deltas))]


def update_epsilon(dataset: DiscrepancyDataset, new: Iterable[DiscrepancyRecord]) -> DiscrepancyDataset:
    """Append records and lower ``epsilon`` to the smallest discrepancy seen."""
    new = tuple(new)
    eps = dataset.epsilon
    if new:
        eps = min(eps, min(r.delta for r in new))
    return DiscrepancyDataset(dataset.records + new, eps)


def pseudo_likelihood_from_moments(mean, variance, epsilon) -> np.ndarray:
    """``Phi((epsilon - mean) / sqrt(variance))`` with an indicator for
    vanishing variance."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(variance, dtype=float)
    degenerate = var < VARIANCE_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (epsilon - mean) / np.sqrt(np.where(degenerate, 1.0, var))
    return np.where(degenerate, (mean <= epsilon).astype(float), ndtr(z))


def log_pseudo_likelihood_from_moments(mean, variance, epsilon) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(variance, dtype=float)
    degenerate = var < VARIANCE_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (epsilon - mean) / np.sqrt(np.where(degenerate, 1.0, var))
        return np.where(degenerate, np.where(mean <= epsilon, 0.0, -np.inf), log_ndtr(z))


def pseudo_likelihood(posterior, epsilon: float, theta) -> np.ndarray | float:
    """Pseudo-likelihood at one point (returns float) or many (returns array).

    ``posterior`` is a fitted regressor exposing ``predict_var``.
    """
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    mean, var = posterior.predict_var(np.atleast_2d(theta))
    out = pseudo_likelihood_from_moments(mean, var, epsilon)
    return float(out[0]) if single else out


def log_pseudo_posterior(posterior, epsilon: float, prior, theta) -> np.ndarray | float:
    """Unnormalized log pseudo-posterior ``ln L_LFI(theta) + ln p(theta)``."""
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    pts = np.atleast_2d(theta)
    logp = np.atleast_1d(prior.log_pdf(pts))
    out = np.full(pts.shape[0], -np.inf)
    ok = np.isfinite(logp)
    if np.any(ok):
        mean, var = posterior.predict_var(pts[ok])
        out[ok] = log_pseudo_likelihood_from_moments(mean, var, epsilon) + logp[ok]
    return float(out[0]) if single else out


@dataclass(frozen=True)
class NoiseConfig:
    """Observation noise: a fixed standard deviation or a profiled one."""

    sigma: float | None = None
    profile_sigma: bool = False

    def __post_init__(self):
        if not self.profile_sigma and (self.sigma is None or not self.sigma > 0):
            raise ValidationError("NoiseConfig needs sigma > 0 unless profile_sigma is set")


def gaussian_log_likelihood(simulated, observed, noise: NoiseConfig) -> tuple[float, float]:
    """I.i.d. Gaussian log-likelihood of the observations.

    Returns ``(log_likelihood, sigma)``; with ``profile_sigma`` the noise is
    set to its closed-form maximizer, the root-mean-squared residual.
    """
    sim = np.asarray(simulated, dtype=float).reshape(-1)
    obs = np.asarray(observed, dtype=float).reshape(-1)
    if sim.shape != obs.shape:
        raise ValidationError(f"length mismatch: simulated {sim.size} vs observed {obs.size}")
    sq = (sim - obs) ** 2
    if noise.profile_sigma:
        sigma = float(np.sqrt(sq.mean()))
        if sigma < SIGMA_FLOOR:
            warnings.warn("zero residuals: profiled sigma floored at 1e-12", RuntimeWarning, stacklevel=2)
            sigma = SIGMA_FLOOR
    else:
        sigma = float(noise.sigma)
    var = sigma**2
    ll = -np.sum(sq / (2.0 * var) + 0.5 * np.log(2.0 * np.pi * var))
    return float(ll), sigma


def map_estimate(posterior, candidates) -> np.ndarray:
    """Candidate with the lowest predicted discrepancy (first one on ties)."""
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    if cand.shape[0] == 0:
        raise ValidationError("map_estimate needs at least one candidate")
    mean = posterior.predict(cand)
    return cand[int(np.argmin(mean))].copy()


def evaluate_discrepancies(
    simulate, thetas: np.ndarray, observed: Sequence[float], workers: int = 1
) -> tuple[list[DiscrepancyRecord], int]:
    """Run ``simulate`` at each row of ``thetas`` and turn outputs into records.

    Failures (exceptions, non-finite output) are dropped and counted. Results
    are merged by row index, so the outcome does not depend on ``workers``.
    """

    obs = np.asarray(observed, dtype=float).reshape(-1)

    def one(theta):
        try:
            sim = np.asarray(simulate(theta), dtype=float).reshape(-1)
        except (BatinferError, ArithmeticError, ValueError) as exc:
            logger.debug("evaluation failed at %s: %s", theta, exc)
            return None
        if sim.shape != obs.shape:
            raise ValidationError(f"model returned {sim.size} outputs for {obs.size} observations")
        try:
            return rmse_discrepancy(sim, obs)
        except EvaluationError:
            return None

    thetas = np.atleast_2d(thetas)
    if workers > 1 and thetas.shape[0] > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            deltas = list(pool.map(one, list(thetas)))
    else:
        deltas = [one(t) for t in thetas]
    records = [DiscrepancyRecord(tuple(t), d) for t, d in zip(thetas, deltas) if d is not None]
    return records, sum(d is None for d in deltas)
