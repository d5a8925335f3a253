import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from batinfer.distributions import Z_975, GaussianPrior, ParameterPrior, build_prior
from batinfer.exceptions import ValidationError


def test_uniform_log_density_constant():
    prior = build_prior([("c", "identity", "uniform", (1.0, 1.2))])
    assert prior.log_pdf([1.1]) == pytest.approx(np.log(5.0), abs=1e-5)
    assert prior.log_pdf([1.1]) == pytest.approx(1.60944, abs=1e-5)
    assert prior.log_pdf([1.3]) == -np.inf


def test_log_normal_location_and_scale():
    c = ParameterPrior("u", "log", "normal", 0.01, 0.2)
    # frozen oracle: centre and 95% half-width of [ln 0.01, ln 0.2]
    assert c.loc == pytest.approx(-3.10730, abs=1e-5)
    assert c.scale == pytest.approx(0.76423, abs=1e-5)


def test_normal_has_95_percent_inside_bounds():
    c = ParameterPrior("a", "identity", "normal", -2.0, 6.0)
    mass = stats.norm.cdf(6.0, c.loc, c.scale) - stats.norm.cdf(-2.0, c.loc, c.scale)
    assert mass == pytest.approx(0.95, abs=1e-6)
    assert stats.norm.cdf(Z_975) == pytest.approx(0.975, abs=1e-6)


@pytest.mark.parametrize(
    "rec",
    [
        ("a", "sqrt", "normal", (1, 2)),
        ("a", "identity", "cauchy", (1, 2)),
        ("a", "identity", "normal", (2, 1)),
        ("a", "log", "normal", (0, 1)),
        ("a", "identity", "normal", (np.nan, 1)),
    ],
)
def test_invalid_components(rec):
    with pytest.raises(ValidationError):
        build_prior([rec])


def test_duplicate_names_and_missing_field():
    with pytest.raises(ValidationError):
        build_prior([("a", "identity", "normal", (0, 1)), ("a", "identity", "normal", (0, 1))])
    with pytest.raises(ValidationError, match="lower"):
        build_prior([{"name": "a", "upper": 1.0}])


def test_log_pdf_includes_jacobian():
    prior = build_prior([("k", "log", "normal", (1.0, 100.0))])
    c = prior.components[0]
    theta = 7.0
    expected = stats.norm.logpdf(np.log(theta), c.loc, c.scale) - np.log(theta)
    assert prior.log_pdf([theta]) == pytest.approx(expected, rel=1e-12)
    # density integrates to one in physical units
    grid = np.linspace(1e-3, 2000.0, 400001)
    dens = np.exp(prior.log_pdf(grid[:, None]))
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=2e-3)


def test_sampling_is_seeded_and_in_support():
    prior = build_prior([("a", "log", "uniform", (1e-3, 1.0)), ("b", "identity", "normal", (0.0, 1.0))])
    a = prior.sample(500, 7)
    b = prior.sample(500, 7)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (500, 2)
    assert np.all(prior.in_support(a))
    assert np.all((a[:, 0] >= 1e-3) & (a[:, 0] <= 1.0))


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 1e3), st.floats(1.5, 1e3))
def test_round_trip_transform(lo, ratio):
    prior = build_prior([("x", "log", "normal", (lo, lo * ratio))])
    theta = np.array([[lo * np.sqrt(ratio)]])
    np.testing.assert_allclose(prior.from_transformed(prior.to_transformed(theta)), theta, rtol=1e-12)


def test_gaussian_prior_from_prior_and_density():
    prior = build_prior([("a", "identity", "normal", (-1.0, 1.0)), ("b", "log", "normal", (1.0, 10.0))])
    g = GaussianPrior.from_prior(prior)
    pts = prior.sample(20, 1)
    np.testing.assert_allclose(g.log_pdf(pts), prior.log_pdf(pts), rtol=1e-10)
    with pytest.raises(ValidationError):
        GaussianPrior(("a",), [False], [0.0], [[-1.0]])
