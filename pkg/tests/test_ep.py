import numpy as np
import pytest

from batinfer.distributions import build_prior
from batinfer.ep import (
    EpSchedule,
    FeatureSplit,
    SiteApproximation,
    compute_feature_dampening,
    damped_update,
    ep_iterate,
    ep_run,
)
from batinfer.exceptions import NumericalError, ValidationError
from batinfer.models import Dataset, ForwardModel
from batinfer.sober import SoberConfig, run


def test_dampening_formula():
    assert compute_feature_dampening(0.5, 1, 1) == pytest.approx(0.5)
    assert compute_feature_dampening(0.5, 2, 1) == pytest.approx(1 - 2 * (1 - np.sqrt(0.5)))
    assert compute_feature_dampening(0.5, 2, 1) == pytest.approx(0.41421, abs=1e-5)
    assert compute_feature_dampening(0.5, 2, 2) == pytest.approx(0.68179, abs=1e-5)
    assert compute_feature_dampening(1.0, 3, 2) == 1.0
    with pytest.raises(ValidationError, match="raise alpha_final"):
        compute_feature_dampening(0.01, 10, 1)
    with pytest.raises(ValidationError):
        compute_feature_dampening(0.0, 1, 1)


def test_schedule_retention_identity():
    # J*K single-feature updates at rate alpha_f remove J*(1 - alpha_final**(1/(JK))) per update
    J, K, a = 3, 2, 0.6
    alpha_f = compute_feature_dampening(a, J, K)
    per_update = 1 - J * (1 - alpha_f) / J
    assert alpha_f == pytest.approx(per_update)
    assert (1 - (1 - alpha_f) / J) ** (J * K) == pytest.approx(a, rel=1e-12)


def test_damped_update_natural_parameters():
    a = SiteApproximation([[1.0]], [0.0])
    b = SiteApproximation([[3.0]], [3.0])
    assert damped_update(a, b, 0.5).precision[0, 0] == pytest.approx(2.0)
    np.testing.assert_array_equal(damped_update(a, b, 1.0).precision, b.precision)
    np.testing.assert_array_equal(damped_update(a, b, 0.0).shift, a.shift)
    bad = SiteApproximation([[-10.0]], [0.0])
    with pytest.raises(NumericalError):
        damped_update(a, bad, 1.0)
    # the full step gives precision -0.5; the halved step gives 0.25
    rescued = damped_update(a, SiteApproximation([[-0.5]], [0.0]), 1.0, cavity=SiteApproximation([[0.0]], [0.0]))
    assert rescued.precision[0, 0] == pytest.approx(0.25)
    with pytest.raises(ValidationError):
        damped_update(a, SiteApproximation(np.eye(2), np.zeros(2)), 0.5)


def _conjugate(order, schedule):
    P0 = np.eye(2)
    A = [np.array([[2.0, 0.5], [0.5, 1.0]]), np.array([[1.0, 0.2], [0.2, 3.0]])]
    b = [np.array([1.0, 2.0]), np.array([-1.0, 0.5])]

    def tilted(j, cav, _):
        C = np.linalg.inv(cav.precision + A[j])
        return C @ (cav.shift + b[j]), C

    state = ep_iterate(SiteApproximation(P0, np.zeros(2)), 2, tilted, schedule, order)
    return state.posterior(), P0 + A[0] + A[1], b[0] + b[1]


def test_conjugate_full_steps_exact():
    post, P, h = _conjugate(None, EpSchedule(2, 1, 1.0))
    np.testing.assert_allclose(post.precision, P, atol=1e-6)
    np.testing.assert_allclose(post.mean, np.linalg.solve(P, h), atol=1e-6)


def test_feature_order_agreement():
    a, _, _ = _conjugate([0, 1], EpSchedule(2, 2, 0.5))
    b, _, _ = _conjugate([1, 0], EpSchedule(2, 2, 0.5))
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-3)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-3)


def test_feature_split():
    s = FeatureSplit.from_x_ranges(np.arange(10.0), [(0, 5), (5, 9)], ("early", "late"))
    s.validate_for(10)
    assert s.labels == ("early", "late")
    with pytest.raises(ValidationError):
        FeatureSplit(([0, 1], [1, 2])).validate_for(3)
    with pytest.raises(ValidationError):
        FeatureSplit(([0], [])).validate_for(1)
    with pytest.raises(ValidationError):
        FeatureSplit(([0], [1])).validate_for(3)


TARGET = 0.37
QUAD = ForwardModel("quad", ("theta",), lambda th, x: np.full(np.shape(x), (th[0] - TARGET) ** 2), time_series=False)
PRIOR = build_prior([("theta", "identity", "uniform", (-2.0, 2.0))])


def test_single_feature_matches_plain_run():
    # two readings straddling zero keep the discrepancy floor at 0.05
    data = Dataset([0.0, 1.0], [-0.05, 0.05])
    cfg = SoberConfig(seed=2)
    plain = run(QUAD, data, PRIOR, cfg)
    ep = ep_run(QUAD, data, FeatureSplit(([0, 1],)), PRIOR, cfg, EpSchedule(1, 1, 1.0))
    assert abs(ep.map[0] - plain.map[0]) <= 0.05
    damped = ep_run(QUAD, data, FeatureSplit(([0, 1],)), PRIOR, cfg, EpSchedule(1, 1, 0.5))
    var = lambda r: np.cov(r.posterior_samples.samples[:, 0], aweights=r.posterior_samples.weights)
    assert var(damped) >= var(ep)
