"""Built-in forward models and the observed-data container.

``sizing`` and ``pulse_toy`` are synthetic stand-ins for simulators that are
not shipped with this package (SEI-growth lifetime and pulse-relaxation
simulations). Their outputs are labelled ``synthetic`` wherever they are
written to disk.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .distributions import Z_975, MultivariatePrior, build_prior
from .exceptions import ValidationError

# pulse_toy constants
PULSE_R0 = 0.05
PULSE_K1 = 1e-4
PULSE_K2 = 5e-4
PULSE_CURRENT_RANGE = (0.02, 1.0)
PULSE_DURATION_RANGE = (1.0, 600.0)

# sizing_gain constants
SIZING_RANGE = (1.0, 1.2)
SIZING_DECAY = 0.1
#: observation used for the sizing demo: a gain no oversize factor can reach
SIZING_ASPIRATION = 0.1


@dataclass(frozen=True)
class Dataset:
    """Observed data ``(x, y)`` of equal length."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise ValidationError(f"x and y lengths differ: {x.size} vs {y.size}")
        if x.size == 0:
            raise ValidationError("dataset is empty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("dataset contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x.size

    def check_increasing(self):
        if np.any(np.diff(self.x) <= 0):
            raise ValidationError("x must be strictly increasing for time-series models")

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.x[rows], self.y[rows])


@dataclass(frozen=True)
class ForwardModel:
    """A deterministic simulator ``evaluate(theta, x) -> y``."""

    name: str
    parameter_names: tuple
    function: Callable[[np.ndarray, np.ndarray], np.ndarray]
    input_grid: np.ndarray | None = None
    synthetic: bool = False
    time_series: bool = True
    constraint: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    @property
    def dimension(self) -> int:
        return len(self.parameter_names)

    def evaluate(self, theta, x=None) -> np.ndarray:
        x = self.input_grid if x is None else x
        return np.asarray(self.function(np.asarray(theta, dtype=float), np.asarray(x, dtype=float)), dtype=float)

    __call__ = evaluate

    def valid(self, thetas) -> np.ndarray:
        """Boolean mask of parameter rows the model accepts."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if self.constraint is None:
            return np.ones(thetas.shape[0], dtype=bool)
        return np.asarray(self.constraint(thetas), dtype=bool)


# ----------------------------------------------------------------- knee model
def knee_capacity(slopes: Sequence[float], knees: Sequence[float], cycles) -> np.ndarray:
    """Relative capacity of a continuous piecewise-linear fade curve.

    ``slopes`` are capacity-loss rates per cycle for each segment and
    ``knees`` the cycle numbers at which the rate changes
    (``len(slopes) == len(knees) + 1``).

    >>> float(knee_capacity([1e-4, 1e-3], [500], [1000])[0])
    0.45
    """
    slopes = np.asarray(slopes, dtype=float)
    knees = np.asarray(knees, dtype=float)
    n = np.asarray(cycles, dtype=float)
    if slopes.size != knees.size + 1:
        raise ValidationError(f"{slopes.size} slopes need {slopes.size - 1} knees, got {knees.size}")
    if np.any(knees < 0) or np.any(np.diff(knees) <= 0):
        raise ValidationError(f"knees must be non-negative and strictly increasing, got {knees.tolist()}")
    edges = np.concatenate([[0.0], knees, [np.inf]])
    loss = np.zeros_like(n)
    for s, lo, hi in zip(slopes, edges[:-1], edges[1:]):
        loss = loss + s * np.clip(n - lo, 0.0, hi - lo)
    return 1.0 - loss


def _knee_fn(n_knees: int):
    def fn(theta, cycles):
        slopes = theta[0::2]
        knees = theta[1::2]
        if slopes.size != n_knees + 1:
            raise ValidationError(f"knee model expects {2 * n_knees + 1} parameters")
        return knee_capacity(slopes, knees, cycles)

    return fn


def _knees_ordered(thetas):
    knees = thetas[:, 1::2]
    return np.all(np.diff(knees, axis=1) > 0, axis=1) & np.all(knees >= 0, axis=1)


# ---------------------------------------------------------- voltage relaxation
def voltage_relaxation(delta_u_inf: float, log_slope: float, tau: float, t) -> np.ndarray:
    """Relaxation overpotential
    ``log_slope * artanh(tanh(delta_u_inf / log_slope) * exp(-t / tau))``.

    Evaluated in the equivalent log-ratio form, which stays accurate when
    ``tanh`` saturates; ``t == 0`` returns ``delta_u_inf`` exactly.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("relaxation times must be non-negative")
    if not (delta_u_inf > 0 and log_slope > 0 and tau > 0):
        raise ValidationError("relaxation parameters must be positive")
    a = delta_u_inf / log_slope
    q = np.exp(-t / tau)
    one_minus_q = -np.expm1(-t / tau)
    e = np.exp(-2.0 * a)
    num = (1.0 + q) + e * one_minus_q
    den = one_minus_q + e * (1.0 + q)
    with np.errstate(divide="ignore"):
        out = 0.5 * log_slope * np.log(num / den)
    # relaxation never exceeds its t=0 value; also guards den underflow at tiny t
    out = np.minimum(out, delta_u_inf)
    return np.where(t == 0, delta_u_inf, out)


# ---------------------------------------------------------------- sizing demo
def sizing_gain(oversize) -> np.ndarray | float:
    """Synthetic lifetime gain per extra capacity, peaking at 10% oversize."""
    c = np.asarray(oversize, dtype=float)
    lo, hi = SIZING_RANGE
    if np.any(c < lo - 1e-12) or np.any(c > hi + 1e-12):
        raise ValidationError(f"oversize factor must lie in [{lo}, {hi}]")
    x = c - 1.0
    g = x * np.exp(-x / SIZING_DECAY)
    return float(g) if g.ndim == 0 else g


#: two-knee fade used for synthetic selection data (slope_1, knee_1, slope_2, knee_2, slope_3)
KNEE2_SYNTHETIC_TRUTH = (1e-4, 600.0, 1e-3, 1200.0, 2e-4)
KNEE_NOISE_SD = 0.005


def synthetic_knee_data(seed=None, n_points: int = 101, max_cycle: float = 1500.0, noise_sd: float = KNEE_NOISE_SD) -> Dataset:
    """Two-knee capacity fade with additive Gaussian noise on a uniform cycle grid."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, max_cycle, int(n_points))
    truth = np.asarray(KNEE2_SYNTHETIC_TRUTH)
    y = knee_capacity(truth[0::2], truth[1::2], x) + rng.normal(0.0, noise_sd, x.size)
    return Dataset(x, y)


def linear_model(slope: float, x) -> np.ndarray:
    return slope * np.asarray(x, dtype=float)


# ------------------------------------------------------------------ pulse toy
def pulse_toy_forward(current: float, duration: float, check_box: bool = True) -> tuple[float, float]:
    """Synthetic map from a constant-current pulse ``(I, tau_p)`` to the
    square-root fit ``(a, b)`` of the following rest phase.

    ``a = -R0*I - K1*I**2*tau_p`` and ``b = K2*I*sqrt(tau_p)``. The map is
    injective for ``I > 0``: ``I*sqrt(tau_p)`` is fixed by ``b`` and then
    ``I`` by ``a``.
    """
    if check_box:
        ilo, ihi = PULSE_CURRENT_RANGE
        tlo, thi = PULSE_DURATION_RANGE
        if not (ilo <= current <= ihi and tlo <= duration <= thi):
            raise ValidationError(
                f"pulse ({current}, {duration}) outside the box I in {PULSE_CURRENT_RANGE}, tau in {PULSE_DURATION_RANGE}"
            )
    a = -PULSE_R0 * current - PULSE_K1 * current**2 * duration
    b = PULSE_K2 * current * np.sqrt(duration)
    return float(a), float(b)


# ------------------------------------------------------------------- registry
def _log_normal(name, lo, hi):
    return {"name": name, "transform": "log", "family": "normal", "lower": lo, "upper": hi}


KNEE_PRIOR_RECORDS = [
    _log_normal("slope_1", 1e-5, 1e-3),
    _log_normal("knee_1", 200.0, 2000.0),
    _log_normal("slope_2", 1e-5, 1e-2),
    _log_normal("knee_2", 700.0, 2500.0),
    _log_normal("slope_3", 1e-5, 1e-2),
]

DEFAULT_PRIORS = {
    "knee1": KNEE_PRIOR_RECORDS[:3],
    "knee2": KNEE_PRIOR_RECORDS,
    "relaxation": [
        _log_normal("delta_u_inf", 0.01, 0.2),
        _log_normal("log_slope", 0.001, 0.2),
        _log_normal("tau", 1e3, 1e7),
    ],
    "sizing": [{"name": "oversize", "transform": "identity", "family": "uniform", "lower": 1.0, "upper": 1.2}],
    "linear": [{"name": "slope", "transform": "identity", "family": "normal", "lower": -Z_975, "upper": Z_975}],
    "pulse_toy": [
        {"name": "current", "transform": "identity", "family": "uniform", "lower": 0.02, "upper": 1.0},
        {"name": "duration", "transform": "identity", "family": "uniform", "lower": 1.0, "upper": 600.0},
    ],
}


def _make(name: str) -> ForwardModel:
    if name == "knee1":
        return ForwardModel("knee1", ("slope_1", "knee_1", "slope_2"), _knee_fn(1), constraint=_knees_ordered)
    if name == "knee2":
        return ForwardModel(
            "knee2", ("slope_1", "knee_1", "slope_2", "knee_2", "slope_3"), _knee_fn(2), constraint=_knees_ordered
        )
    if name == "relaxation":
        return ForwardModel(
            "relaxation",
            ("delta_u_inf", "log_slope", "tau"),
            lambda th, t: voltage_relaxation(th[0], th[1], th[2], t),
        )
    if name == "sizing":
        return ForwardModel(
            "sizing",
            ("oversize",),
            lambda th, x: np.full(np.shape(x), sizing_gain(th[0])),
            input_grid=np.zeros(1),
            synthetic=True,
            time_series=False,
        )
    if name == "linear":
        return ForwardModel("linear", ("slope",), lambda th, x: linear_model(th[0], x), time_series=False)
    if name == "pulse_toy":
        return ForwardModel(
            "pulse_toy",
            ("current", "duration"),
            lambda th, x: np.array(pulse_toy_forward(th[0], th[1])),
            input_grid=np.array([0.0, 1.0]),
            synthetic=True,
            time_series=False,
        )
    raise ValidationError(f"unknown model {name!r}; available: {sorted(REGISTRY)}")


REGISTRY = ("knee1", "knee2", "relaxation", "sizing", "linear", "pulse_toy")


def get_model(name: str) -> ForwardModel:
    return _make(name)


def default_prior(name: str) -> MultivariatePrior:
    if name not in DEFAULT_PRIORS:
        raise ValidationError(f"unknown model {name!r}; available: {sorted(REGISTRY)}")
    return build_prior(DEFAULT_PRIORS[name])


def sizing_dataset() -> Dataset:
    """Observation for the sizing demo; the discrepancy is
    ``SIZING_ASPIRATION - gain``, minimal at the gain optimum."""
    return Dataset(np.zeros(1), np.full(1, SIZING_ASPIRATION))
