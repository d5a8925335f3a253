import numpy as np
import pytest

from batinfer.analysis import (
    WeightedPosteriorSamples,
    correlation_matrix,
    covariance_grid,
    predictive_posterior,
    summarize,
    systematic_resample,
    weighted_moments,
)
from batinfer.exceptions import ValidationError
from batinfer.models import get_model


def test_weights_validated_and_normalized():
    s = WeightedPosteriorSamples([[0.0], [1.0]], [2.0, 2.0])
    np.testing.assert_allclose(s.weights, [0.5, 0.5])
    with pytest.raises(ValidationError):
        WeightedPosteriorSamples([[0.0]], [-1.0])
    with pytest.raises(ValidationError):
        WeightedPosteriorSamples([[0.0], [1.0]], [0.0, 0.0])


def test_summarize_population_variance():
    s = summarize(WeightedPosteriorSamples([[-1.0], [1.0]], [1, 1]))
    assert s.mean[0] == 0.0 and s.covariance[0, 0] == 1.0
    with pytest.warns(RuntimeWarning):
        s = summarize(WeightedPosteriorSamples([[3.0, 1.0], [5.0, 2.0]], [1, 0]))
    np.testing.assert_array_equal(s.mean, [3.0, 1.0])
    with pytest.warns(RuntimeWarning):
        s = summarize(WeightedPosteriorSamples([[2.0, 1.0]], [1.0]))
    assert np.all(s.covariance == 0)


def test_correlation_matrix():
    C = correlation_matrix([[1.0, 0.5], [0.5, 4.0]])
    assert C[0, 1] == pytest.approx(0.25)
    np.testing.assert_array_equal(np.diag(C), [1.0, 1.0])
    v = np.array([1.0, -2.0, 3.0])
    C = correlation_matrix(np.outer(v, v))
    np.testing.assert_allclose(np.abs(C), 1.0, atol=1e-12)
    with pytest.warns(RuntimeWarning):
        C = correlation_matrix([[0.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(C, np.eye(2))
    D = np.diag([2.0, 0.3])
    cov = np.array([[1.0, 0.3], [0.3, 2.0]])
    np.testing.assert_allclose(correlation_matrix(D @ cov @ D), correlation_matrix(cov), atol=1e-12)


def test_resampling_matches_weighted_moments(rng):
    x = rng.normal(size=(2000, 2))
    w = np.exp(-0.5 * (x[:, 0] - 0.5) ** 2)
    s = WeightedPosteriorSamples(x, w)
    idx = systematic_resample(s.weights, 100_000, 1)
    mean, cov = weighted_moments(s)
    se = np.sqrt(np.diag(cov) / s.effective_sample_size)
    assert np.all(np.abs(x[idx].mean(0) - mean) < 3 * se)


def test_covariance_grid_panels(rng):
    s = WeightedPosteriorSamples(rng.normal(size=(10_000, 2)), np.ones(10_000))
    g = covariance_grid(s, bins=10)
    assert len(g["marginals"]) == 2 and len(g["pairs"]) == 1
    for panel in g["marginals"]:
        assert sum(panel["density"]) == pytest.approx(1.0, abs=1e-12)
    joint = np.array(g["pairs"][0]["density"])
    assert joint.sum() == pytest.approx(1.0, abs=1e-12)
    outer = np.outer(joint.sum(1), joint.sum(0))
    assert 0.5 * np.abs(joint - outer).sum() < 0.1
    one = covariance_grid(WeightedPosteriorSamples(rng.normal(size=(100, 1)), np.ones(100)))
    assert len(one["pairs"]) == 0
    with pytest.raises(ValidationError):
        covariance_grid(s, bins=1)


def test_predictive_posterior(rng):
    model = get_model("linear")
    x = np.linspace(-2, 2, 9)
    point = predictive_posterior(model, WeightedPosteriorSamples([[0.7]], [1.0]), x, 5, seed=0)
    assert np.all(point.curves == point.curves[0])
    theta = np.concatenate([1 + rng.normal(0, 0.2, 5000), 1 - (rng.normal(0, 0.2, 5000))])[:, None]
    n = 2000
    pred = predictive_posterior(model, WeightedPosteriorSamples(theta, np.ones(len(theta))), x, n, seed=1)
    lo, hi = pred.band(0.95)
    centre = 0.5 * (lo + hi)
    assert np.max(np.abs(centre - x) / np.maximum(np.abs(x), 1)) <= 3 / np.sqrt(n)
    assert pred.coverage(x) == 1.0
    assert pred.weights.sum() == pytest.approx(1.0)


def test_predictive_drops_failures():
    model = get_model("relaxation")
    s = WeightedPosteriorSamples([[0.05, 0.02, 1000.0], [-0.05, 0.02, 1000.0]], [0.5, 0.5])
    pred = predictive_posterior(model, s, np.linspace(0, 100, 5), 10, seed=0)
    assert pred.failures > 0 and pred.curves.shape[0] == 10 - pred.failures
