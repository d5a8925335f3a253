"""Summaries of weighted posterior samples.

Covers the data products behind a corner plot (marginal and pairwise
histograms), the Gaussian summary (mean, covariance, correlation) and the
predictive posterior band.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightedPosteriorSamples:
    """Parameter draws with non-negative weights normalized to sum to one."""

    samples: np.ndarray
    weights: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if s.shape[0] != w.size or w.size == 0:
            raise ValidationError(f"{s.shape[0]} samples but {w.size} weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            raise ValidationError("weights sum to zero")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "weights", w / total)
        names = tuple(self.names) or tuple(f"theta_{j}" for j in range(s.shape[1]))
        object.__setattr__(self, "names", names)

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]

    @property
    def effective_sample_size(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def resample(self, n: int, seed=None) -> np.ndarray:
        """Indices from systematic resampling."""
        return systematic_resample(self.weights, n, seed)


@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    covariance: np.ndarray
    correlation: np.ndarray
    map: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "correlation": self.correlation.tolist(),
            "map": self.map.tolist(),
        }


def systematic_resample(weights, n: int, seed=None) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    rng = np.random.default_rng(seed)
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(w / w.sum())
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right").clip(max=w.size - 1)


def correlation_matrix(covariance) -> np.ndarray:
    """Normalize a covariance matrix to correlations.

    Rows with zero variance are undefined; they are set to 0 with a unit
    diagonal and a warning.
    """
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    zero = sd <= 0
    if np.any(zero):
        warnings.warn(f"zero variance in dimensions {np.flatnonzero(zero).tolist()}", RuntimeWarning, stacklevel=2)
    safe = np.where(zero, 1.0, sd)
    corr = cov / np.outer(safe, safe)
    corr[zero, :] = 0.0
    corr[:, zero] = 0.0
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def weighted_moments(samples: WeightedPosteriorSamples) -> tuple[np.ndarray, np.ndarray]:
    w = samples.weights
    mean = w @ samples.samples
    centered = samples.samples - mean
    cov = (centered * w[:, None]).T @ centered
    return mean, 0.5 * (cov + cov.T)


def summarize(samples: WeightedPosteriorSamples, map_point=None) -> PosteriorSummary:
    """Weighted mean, population covariance and correlation.

    ``map_point`` defaults to the highest-weight sample.
    """
    if np.count_nonzero(samples.weights) < 2:
        warnings.warn("all weight on a single sample: covariance is zero", RuntimeWarning, stacklevel=2)
    mean, cov = weighted_moments(samples)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        corr = correlation_matrix(cov)
    if map_point is None:
        map_point = samples.samples[int(np.argmax(samples.weights))]
    return PosteriorSummary(mean, cov, corr, np.asarray(map_point, dtype=float))


def weighted_quantile(values, weights, q) -> np.ndarray:
    """Quantiles of weighted data (inverted empirical CDF, midpoint rule)."""
    values = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(values)
    v, w = values[order], w[order]
    cdf = (np.cumsum(w) - 0.5 * w) / w.sum()
    return np.interp(q, cdf, v)


@dataclass(frozen=True)
class PredictivePosterior:
    x: np.ndarray
    curves: np.ndarray  # (n_draws, len(x))
    weights: np.ndarray  # normalized, for colouring
    parameters: np.ndarray
    failures: int = 0

    def band(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        lo = 0.5 * (1.0 - level)
        return (
            np.quantile(self.curves, lo, axis=0),
            np.quantile(self.curves, 1.0 - lo, axis=0),
        )

    def coverage(self, observed, level: float = 0.95) -> float:
        """Fraction of observed points inside the pointwise band."""
        lower, upper = self.band(level)
        y = np.asarray(observed, dtype=float)
        return float(np.mean((y >= lower) & (y <= upper)))


def predictive_posterior(model, samples: WeightedPosteriorSamples, x, n_draws: int, seed=None) -> PredictivePosterior:
    """Evaluate the model at systematically resampled posterior draws.

    Draws are equally likely after resampling; the returned weights are the
    original posterior weights of the drawn points, renormalized, and are
    meant for colouring curves only.
    """
    x = np.asarray(x, dtype=float)
    idx = samples.resample(int(n_draws), seed)
    curves, params, weights = [], [], []
    failures = 0
    for i in idx:
        theta = samples.samples[i]
        try:
            y = np.asarray(model.evaluate(theta, x), dtype=float)
        except (ArithmeticError, ValueError) as exc:
            logger.debug("predictive draw failed at %s: %s", theta, exc)
            failures += 1
            continue
        if not np.all(np.isfinite(y)):
            failures += 1
            continue
        curves.append(y)
        params.append(theta)
        weights.append(samples.weights[i])
    if failures:
        logger.warning("%d predictive draws failed and were dropped", failures)
    if not curves:
        raise ValidationError("every predictive draw failed")
    w = np.asarray(weights)
    return PredictivePosterior(x, np.vstack(curves), w / w.sum(), np.vstack(params), failures)


def covariance_grid(samples: WeightedPosteriorSamples, bins: int = 20) -> dict:
    """Weighted marginal and pairwise histograms for a corner plot.

    Ranges span the weighted 0.5-99.5 percentiles (samples outside are
    dropped); every panel's densities sum to one.
    """
    bins = int(bins)
    if bins < 2:
        raise ValidationError("bins must be >= 2")
    s, w = samples.samples, samples.weights
    edges = []
    for j in range(samples.dimension):
        lo, hi = weighted_quantile(s[:, j], w, [0.005, 0.995])
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges.append(np.linspace(lo, hi, bins + 1))

    def normalized(h):
        total = h.sum()
        return h / total if total > 0 else h

    marginals = []
    for j in range(samples.dimension):
        h, _ = np.histogram(s[:, j], bins=edges[j], weights=w)
        marginals.append({"parameter": samples.names[j], "edges": edges[j].tolist(), "density": normalized(h).tolist()})
    pairs = []
    for i in range(samples.dimension):
        for j in range(i + 1, samples.dimension):
            h, _, _ = np.histogram2d(
                s[:, i],
                s[:, j],
                bins=[edges[i], edges[j]],
                weights=w,
            )
            pairs.append(
                {"parameters": [samples.names[i], samples.names[j]], "density": normalized(h).tolist()}
            )
    return {"marginals": marginals, "pairs": pairs}
