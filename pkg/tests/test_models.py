import numpy as np
import pytest

from batinfer.exceptions import ValidationError
from batinfer.models import (
    REGISTRY,
    Dataset,
    default_prior,
    get_model,
    knee_capacity,
    linear_model,
    pulse_toy_forward,
    sizing_gain,
    synthetic_knee_data,
    voltage_relaxation,
)


def test_knee_capacity_values():
    assert knee_capacity([1e-4, 1e-3], [500], [0.0])[0] == 1.0
    assert knee_capacity([1e-4, 1e-3], [500], [1000.0])[0] == pytest.approx(0.45, abs=1e-12)
    n = np.linspace(0, 3000, 301)
    np.testing.assert_allclose(knee_capacity([2e-4] * 3, [700, 1500], n), 1 - 2e-4 * n, atol=1e-12)


def test_knee_continuity_and_order():
    slopes, knees = [1e-4, 1e-3, 2e-4], [600.0, 1200.0]
    for k in knees:
        lo, at, hi = knee_capacity(slopes, knees, [np.nextafter(k, 0), k, np.nextafter(k, 1e9)])
        assert abs(lo - at) < 1e-12 and abs(hi - at) < 1e-12
    with pytest.raises(ValidationError):
        knee_capacity(slopes, [1200.0, 600.0], [0.0])
    with pytest.raises(ValidationError):
        knee_capacity([1e-4], [600.0], [0.0])
    model = get_model("knee2")
    assert list(model.valid([[1e-4, 600, 1e-3, 1200, 2e-4], [1e-4, 1200, 1e-3, 600, 2e-4]])) == [True, False]


def test_relaxation_values():
    assert voltage_relaxation(0.1, 0.05, 1000.0, [0.0])[0] == 0.1
    direct = 0.05 * np.arctanh(np.tanh(2.0) * np.exp(-1.0))
    assert voltage_relaxation(0.1, 0.05, 1000.0, [1000.0])[0] == pytest.approx(direct, abs=1e-12)
    assert voltage_relaxation(0.1, 0.05, 1000.0, [1000.0])[0] == pytest.approx(0.018537, abs=1e-6)
    t = np.linspace(0, 2e4, 500)
    u = voltage_relaxation(0.1, 0.05, 1000.0, t)
    assert np.all(np.diff(u) < 0)
    assert np.all((u > 0) & (u <= 0.1))
    assert voltage_relaxation(0.1, 0.05, 1000.0, [1e6])[0] < 1e-12


def test_relaxation_saturated_tanh_is_stable():
    # delta_u / log_slope = 200: tanh rounds to 1, the log-ratio form does not
    t = np.array([0.0, 1e-6, 1.0, 10.0, 1000.0])
    u = voltage_relaxation(0.2, 0.001, 100.0, t)
    assert np.all(np.isfinite(u)) and u[0] == 0.2
    assert np.all(np.diff(u) < 0)
    with pytest.raises(ValidationError):
        voltage_relaxation(0.1, 0.05, 1000.0, [-1.0])


def test_sizing_gain():
    assert sizing_gain(1.0) == 0.0
    assert sizing_gain(1.1) == pytest.approx(0.036788, abs=1e-6)
    assert sizing_gain(1.05) == pytest.approx(0.030327, abs=1e-6)
    c = np.linspace(1.0, 1.2, 20001)
    assert c[np.argmax(sizing_gain(c))] == pytest.approx(1.1, abs=1e-4)
    with pytest.raises(ValidationError):
        sizing_gain(1.3)


def test_linear_model():
    np.testing.assert_array_equal(linear_model(0.0, [1, 2]), [0, 0])
    np.testing.assert_allclose(linear_model(5 / 6, [1, 2]), [0.8333, 1.6667], atol=1e-4)


def test_pulse_toy():
    a, b = pulse_toy_forward(1.0, 100.0)
    assert a == pytest.approx(-0.06) and b == pytest.approx(5e-3)
    assert pulse_toy_forward(0.0, 10.0, check_box=False) == (0.0, 0.0)
    with pytest.raises(ValidationError):
        pulse_toy_forward(2.0, 10.0)
    I = np.linspace(0.02, 1.0, 50)
    T = np.linspace(1.0, 600.0, 50)
    out = np.array([pulse_toy_forward(i, t) for i in I for t in T])
    scaled = out / out.std(axis=0)
    from scipy.spatial.distance import pdist

    assert pdist(scaled).min() > 0


def test_registry_and_priors_match():
    for name in REGISTRY:
        model = get_model(name)
        assert default_prior(name).names == model.parameter_names
    with pytest.raises(ValidationError):
        get_model("dfn")


def test_dataset_validation():
    with pytest.raises(ValidationError):
        Dataset([1, 2], [1])
    with pytest.raises(ValidationError):
        Dataset([1, np.nan], [1, 2])
    with pytest.raises(ValidationError):
        Dataset([2, 1], [1, 2]).check_increasing()


def test_synthetic_knee_data_seeded():
    a, b = synthetic_knee_data(3), synthetic_knee_data(3)
    np.testing.assert_array_equal(a.y, b.y)
    assert len(a) == 101 and a.x[-1] == 1500.0


def test_models_are_deterministic():
    model = get_model("relaxation")
    theta = np.array([0.05, 0.02, 5000.0])
    t = np.linspace(0, 1e4, 50)
    np.testing.assert_array_equal(model.evaluate(theta, t), model.evaluate(theta, t))
