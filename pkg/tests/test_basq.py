import numpy as np
import pytest
from scipy.stats import norm

from batinfer.basq import (
    EvidenceEstimate,
    QuadratureNodes,
    build_nodes,
    compare_models,
    default_node_count,
    dimensionality_correction,
    discrepancy_proposal,
    estimate_evidence,
    estimate_evidence_exact_likelihood,
    shared_threshold,
)
from batinfer.distributions import GaussianPrior, build_prior
from batinfer.exceptions import NumericalError, ValidationError
from batinfer.gp import GPRegressor

STD_NORMAL = build_prior([("t", "identity", "normal", (-1.959964, 1.959964))])


def test_nodes():
    prior = build_prior([("a", "identity", "uniform", (0, 1)), ("b", "log", "normal", (1, 10))])
    n = build_nodes(prior, 128, seed=4)
    assert len(n) == 128 and n.nodes.shape == (128, 2)
    assert n.weights.sum() == pytest.approx(1.0)
    np.testing.assert_array_equal(n.nodes, build_nodes(prior, 128, seed=4).nodes)
    assert np.all(prior.in_support(n.nodes))
    with pytest.raises(ValidationError):
        build_nodes(prior, 1)
    with pytest.raises(ValidationError):
        QuadratureNodes(np.zeros((2, 1)), [0.2, 0.2])
    assert default_node_count(5) == 243


def test_importance_nodes_are_unbiased():
    # prior N(0,1), proposal N(1, 0.5^2): E_prior[1{t > 1}] estimated by sum w L
    prop = GaussianPrior(("t",), [False], [1.0], [[0.25]])
    est = []
    for seed in range(200):
        n = build_nodes(STD_NORMAL, 256, seed, proposal=prop)
        est.append(np.sum(n.weights * (n.nodes[:, 0] > 1.0)))
    est = np.array(est)
    truth = norm.sf(1.0)
    assert abs(est.mean() - truth) < 3 * est.std() / np.sqrt(len(est))
    mixed = build_nodes(STD_NORMAL, 256, 0, proposal=prop, defensive=0.25)
    assert np.all(mixed.weights <= 4.0 / 256 + 1e-12)
    with pytest.raises(ValidationError):
        build_nodes(STD_NORMAL, 8, 0, proposal=prop, defensive=1.0)


class _ConstantGP:
    """Stand-in surrogate with a fixed mean and tiny variance."""

    def __init__(self, value):
        self.value = value

    def sample_functions(self, X, n, seed=None):
        rng = np.random.default_rng(seed)
        return self.value + 1e-9 * rng.standard_normal((n, len(X)))


def test_certain_acceptance_and_rejection():
    nodes = build_nodes(STD_NORMAL, 64, 0)
    ev = estimate_evidence(_ConstantGP(0.5), 1.0, nodes, 32, seed=1)
    assert ev.mean == pytest.approx(1.0) and ev.variance <= 1e-6
    assert estimate_evidence(_ConstantGP(2.0), 1.0, nodes, 32, seed=1).mean == 0.0
    with pytest.raises(ValidationError):
        estimate_evidence(_ConstantGP(0.5), 1.0, nodes, 8)
    invalid = estimate_evidence(_ConstantGP(0.5), 1.0, nodes, 32, valid=lambda x: np.zeros(len(x), bool))
    assert invalid.mean == 0.0


def test_evidence_matches_monte_carlo_prior_mass():
    # discrepancy |theta - 0.5| below 0.3: prior mass of [0.2, 0.8]
    X = np.linspace(-3, 3, 40)[:, None]
    gp = GPRegressor(noise_variance=1e-8, optimize_noise=False, kernel="matern52").fit(X, np.abs(X[:, 0] - 0.5))
    rng = np.random.default_rng(0)
    mc = rng.standard_normal(1_000_000)
    p_star = np.mean(np.abs(mc - 0.5) <= 0.3)
    se_mc = np.sqrt(p_star * (1 - p_star) / mc.size)
    ev = estimate_evidence(gp, 0.3, build_nodes(STD_NORMAL, 1024, 3), 64, seed=2)
    assert abs(ev.mean - p_star) <= 3 * np.sqrt(ev.variance + se_mc**2)


def test_exact_likelihood_quadrature():
    nodes = build_nodes(STD_NORMAL, 64, 0)
    ev = estimate_evidence_exact_likelihood(lambda t: np.log(0.7), nodes)
    assert ev.mean == pytest.approx(0.7) and ev.variance == pytest.approx(0.0, abs=1e-20)
    nodes = build_nodes(STD_NORMAL, 4096, 1)
    ev = estimate_evidence_exact_likelihood(lambda t: norm.logpdf(t[0]), nodes)
    truth = 1 / np.sqrt(4 * np.pi)
    assert truth == pytest.approx(0.28209, abs=1e-5)
    assert abs(ev.mean - truth) <= 3 * ev.std
    big = estimate_evidence_exact_likelihood(lambda t: 300.0 + norm.logpdf(t[0]), build_nodes(STD_NORMAL, 64, 0))
    assert np.isfinite(big.mean) and np.isfinite(big.variance)
    with pytest.raises(NumericalError):
        estimate_evidence_exact_likelihood(lambda t: 800.0, build_nodes(STD_NORMAL, 64, 0))


def test_dimensionality_correction():
    ev = EvidenceEstimate(0.01, 1e-6, 27)
    c = dimensionality_correction(ev, 3, 6)
    assert c.mean / ev.mean == pytest.approx((2 * np.pi) ** 1.5, abs=1e-10)
    assert (2 * np.pi) ** 1.5 == pytest.approx(15.7496, abs=1e-4)
    assert c.std / ev.std == pytest.approx((2 * np.pi) ** 1.5)
    assert c.corrected_for_dims == 3
    assert dimensionality_correction(ev, 4, 4).mean == ev.mean
    two_step = dimensionality_correction(dimensionality_correction(ev, 1, 4), 4, 6)
    assert two_step.mean == pytest.approx(dimensionality_correction(ev, 1, 6).mean)
    with pytest.raises(ValidationError):
        dimensionality_correction(ev, 5, 3)


def test_compare_models():
    ranking = compare_models([("knee1", EvidenceEstimate(0.0494, 0.0004**2, 27)), ("knee2", EvidenceEstimate(0.18934, 0.00006**2, 243))])
    assert [r.label for r in ranking] == ["knee2", "knee1"]
    assert ranking[0].relative_percent == pytest.approx(100 * 0.18934 / 0.0494)
    assert all(r.reliable for r in ranking)
    tie = compare_models([("a", EvidenceEstimate(0.1, 1.0, 4)), ("b", EvidenceEstimate(0.1, 0.0, 4))])
    assert [r.label for r in tie] == ["a", "b"] and all(r.tie for r in tie)
    assert not tie[0].reliable
    with pytest.raises(ValidationError):
        compare_models([("a", EvidenceEstimate(0.1, 0.0, 4))])
    with pytest.raises(ValidationError):
        compare_models([("a", EvidenceEstimate(0.1, 0.0, 4))] * 2)


def test_evidence_record_fields():
    rec = EvidenceEstimate(0.2, 0.01, 9).to_dict("m")
    assert set(rec) == {"label", "mean", "variance", "n_nodes", "reliable", "corrected_for_dims"}
    assert rec["reliable"] is True


def test_shared_threshold_and_proposal():
    assert shared_threshold([0.01, 0.03], 0.1) == pytest.approx(0.033)
    with pytest.raises(ValidationError):
        shared_threshold([])
    prior = build_prior([("a", "identity", "normal", (-2, 2)), ("b", "identity", "normal", (-2, 2))])
    thetas = np.random.default_rng(0).normal(size=(50, 2))
    deltas = np.hypot(*thetas.T)
    prop = discrepancy_proposal(prior, thetas, deltas, 0.5, inflation=1.0)
    kept = thetas[deltas <= 0.5] if np.sum(deltas <= 0.5) >= 8 else thetas[np.argsort(deltas)[:8]]
    np.testing.assert_allclose(prop.mean, kept.mean(0), atol=1e-12)
