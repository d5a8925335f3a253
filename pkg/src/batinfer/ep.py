"""Expectation propagation over data features.

The data rows are split into features (for example time windows). Each
feature owns a Gaussian site in transformed parameter space. A feature
update runs the inference loop on that feature's rows with the cavity
(prior times all other sites) as its prior, moment-matches a Gaussian to
the resulting posterior and moves the site a damped step towards
``matched / cavity``. Sites are stored in natural parameters (precision and
precision times mean) so that products and damping are additions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .analysis import WeightedPosteriorSamples, weighted_moments
from .distributions import GaussianPrior
from .exceptions import NumericalError, ValidationError
from .models import Dataset, ForwardModel

logger = logging.getLogger(__name__)

DEGENERATE_INFLATION = 1e-6


def compute_feature_dampening(alpha_final: float, J: int, K: int) -> float:
    """Per-update damping ``1 - J * (1 - alpha_final ** (1 / (J K)))``.

    ``alpha_final = 1`` gives full steps.

    >>> round(compute_feature_dampening(0.5, 2, 2), 5)
    0.68179
    """
    if not 0.0 < alpha_final <= 1.0:
        raise ValidationError(f"alpha_final must lie in (0, 1], got {alpha_final}")
    if int(J) < 1 or int(K) < 1:
        raise ValidationError("J and K must be >= 1")
    J, K = int(J), int(K)
    alpha_f = 1.0 - J * (1.0 - alpha_final ** (1.0 / (J * K)))
    if alpha_f <= 0.0:
        raise ValidationError(
            f"damping schedule infeasible: alpha_f = {alpha_f:.4g} <= 0 for alpha_final={alpha_final}, "
            f"J={J}, K={K}; raise alpha_final or use fewer features"
        )
    return float(alpha_f)


@dataclass(frozen=True)
class EpSchedule:
    J: int
    K: int
    alpha_final: float = 0.5

    @property
    def alpha_f(self) -> float:
        return compute_feature_dampening(self.alpha_final, self.J, self.K)

    def __post_init__(self):
        self.alpha_f  # validates


@dataclass(frozen=True)
class FeatureSplit:
    """Partition of the data rows into labelled features."""

    features: tuple
    labels: tuple = ()

    def __post_init__(self):
        feats = tuple(np.unique(np.asarray(f, dtype=int)) for f in self.features)
        if not feats:
            raise ValidationError("a feature split needs at least one feature")
        if any(f.size == 0 for f in feats):
            raise ValidationError("features must not be empty")
        labels = tuple(self.labels) or tuple(f"feature_{j}" for j in range(len(feats)))
        if len(labels) != len(feats):
            raise ValidationError(f"{len(feats)} features but {len(labels)} labels")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.features)

    def validate_for(self, n_rows: int):
        allrows = np.concatenate(self.features)
        if np.unique(allrows).size != allrows.size:
            raise ValidationError("features must be disjoint")
        if allrows.size != n_rows or allrows.min() < 0 or allrows.max() >= n_rows:
            raise ValidationError(f"features must cover all {n_rows} data rows exactly once")

    @classmethod
    def from_x_ranges(cls, x, ranges: Sequence[tuple[float, float]], labels=()) -> "FeatureSplit":
        """Features from half-open ``[lo, hi)`` ranges of the inputs; the last
        range is closed so that the largest input is included."""
        x = np.asarray(x, dtype=float)
        feats = []
        for j, (lo, hi) in enumerate(ranges):
            last = j == len(ranges) - 1
            feats.append(np.flatnonzero((x >= lo) & ((x <= hi) if last else (x < hi))))
        return cls(tuple(feats), tuple(labels))


@dataclass(frozen=True)
class SiteApproximation:
    """Gaussian factor in natural parameters: ``precision`` and
    ``shift = precision @ mean``. A zero precision is the flat site."""

    precision: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.precision, dtype=float))
        h = np.asarray(self.shift, dtype=float).reshape(-1)
        if P.shape != (h.size, h.size):
            raise ValidationError("site precision and shift shapes do not match")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(h))):
            raise ValidationError("site parameters must be finite")
        object.__setattr__(self, "precision", 0.5 * (P + P.T))
        object.__setattr__(self, "shift", h)

    @classmethod
    def flat(cls, d: int) -> "SiteApproximation":
        return cls(np.zeros((d, d)), np.zeros(d))

    @classmethod
    def from_moments(cls, mean, cov) -> "SiteApproximation":
        P = np.linalg.inv(np.atleast_2d(cov))
        return cls(P, P @ np.asarray(mean, dtype=float).reshape(-1))

    @property
    def dimension(self) -> int:
        return self.shift.size

    @property
    def cov(self) -> np.ndarray:
        return np.linalg.inv(self.precision)

    @property
    def mean(self) -> np.ndarray:
        return np.linalg.solve(self.precision, self.shift)

    def __add__(self, other: "SiteApproximation") -> "SiteApproximation":
        return SiteApproximation(self.precision + other.precision, self.shift + other.shift)

    def __sub__(self, other: "SiteApproximation") -> "SiteApproximation":
        return SiteApproximation(self.precision - other.precision, self.shift - other.shift)

    def is_positive_definite(self) -> bool:
        try:
            np.linalg.cholesky(self.precision)
            return True
        except np.linalg.LinAlgError:
            return False

    def is_positive_semidefinite(self, rtol: float = 1e-10) -> bool:
        vals = np.linalg.eigvalsh(self.precision)
        return bool(vals.min() >= -rtol * max(1.0, np.abs(vals).max()))


def _mix(current: SiteApproximation, proposed: SiteApproximation, a: float) -> SiteApproximation:
    return SiteApproximation(
        (1.0 - a) * current.precision + a * proposed.precision,
        (1.0 - a) * current.shift + a * proposed.shift,
    )


def damped_update(
    current: SiteApproximation, proposed: SiteApproximation, alpha_f: float, cavity: SiteApproximation | None = None
) -> SiteApproximation:
    """Convex combination ``(1 - alpha_f) current + alpha_f proposed`` in
    natural parameters.

    Without ``cavity`` the updated site itself must be positive
    semi-definite (a flat site has zero precision). With it, the check is on
    the updated posterior ``cavity + site``: EP sites may carry negative
    precision as long as the approximation they form stays proper. On
    failure the step is halved once, then a :class:`NumericalError` is
    raised.
    """
    if current.dimension != proposed.dimension:
        raise ValidationError("site dimensions differ")
    if not 0.0 <= alpha_f <= 1.0:
        raise ValidationError(f"alpha_f must lie in [0, 1], got {alpha_f}")

    def ok(site):
        if cavity is None:
            return site.is_positive_semidefinite()
        return (cavity + site).is_positive_definite()

    out = _mix(current, proposed, alpha_f)
    if ok(out):
        return out
    logger.warning("damped site update is not proper; halving the step")
    out = _mix(current, proposed, 0.5 * alpha_f)
    if ok(out):
        return out
    raise NumericalError("site update is not proper even with a halved step")


def prior_site(prior) -> SiteApproximation:
    """Gaussian approximation of the prior in natural parameters."""
    return SiteApproximation.from_moments(prior.transformed_mean, prior.transformed_cov)


def moment_match(samples: WeightedPosteriorSamples, prior) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and covariance in transformed coordinates. A degenerate
    covariance gets ``1e-6`` of the prior variance added to its diagonal."""
    z = WeightedPosteriorSamples(prior.to_transformed(samples.samples), samples.weights)
    mean, cov = weighted_moments(z)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        logger.warning("degenerate moment match; inflating the covariance diagonal")
        cov = cov + DEGENERATE_INFLATION * np.diag(np.diag(prior.transformed_cov))
    return mean, cov


class CavityPrior(GaussianPrior):
    """Gaussian cavity restricted to the support of the original prior."""

    def __init__(self, names, is_log, mean, cov, support):
        super().__init__(names, is_log, mean, cov)
        self.support = support

    def in_support(self, theta):
        return np.asarray(super().in_support(theta)) & np.asarray(self.support.in_support(theta))


@dataclass
class EpState:
    prior: SiteApproximation
    sites: list
    history: list = field(default_factory=list)

    def posterior(self) -> SiteApproximation:
        total = self.prior
        for s in self.sites:
            total = total + s
        return total

    def cavity(self, j: int) -> SiteApproximation:
        total = self.prior
        for i, s in enumerate(self.sites):
            if i != j:
                total = total + s
        return total


def ep_iterate(
    prior_natural: SiteApproximation,
    n_features: int,
    tilted: Callable[[int, SiteApproximation, int], tuple[np.ndarray, np.ndarray]],
    schedule: EpSchedule,
    order: Sequence[int] | None = None,
) -> EpState:
    """Generic damped EP sweep.

    ``tilted(j, cavity, update_index)`` returns the mean and covariance of
    the cavity times feature ``j``'s likelihood. Features are visited in
    ``order`` (default ``0..J-1``) on each of the ``K`` passes. A cavity
    whose precision is not positive definite is replaced by the prior for
    that update.
    """
    if n_features != schedule.J:
        raise ValidationError(f"schedule is for {schedule.J} features, got {n_features}")
    order = list(range(n_features)) if order is None else [int(j) for j in order]
    if sorted(order) != list(range(n_features)):
        raise ValidationError("order must be a permutation of the feature indices")
    d = prior_natural.dimension
    state = EpState(prior_natural, [SiteApproximation.flat(d) for _ in range(n_features)])
    alpha = schedule.alpha_f
    update = 0
    for k in range(schedule.K):
        for j in order:
            cavity = state.cavity(j)
            if not cavity.is_positive_definite():
                logger.warning("cavity for feature %d is not positive definite; using the prior", j)
                cavity = prior_natural
            mean, cov = tilted(j, cavity, update)
            proposed = SiteApproximation.from_moments(mean, cov) - cavity
            state.sites[j] = damped_update(state.sites[j], proposed, alpha, cavity)
            state.history.append((k, j))
            update += 1
    return state


def ep_run(model: ForwardModel, data: Dataset, split: FeatureSplit, prior, sober_config=None, schedule: EpSchedule | None = None, n_final: int | None = None):
    """EP over ``split`` with one inference run per feature update.

    The final posterior is the Gaussian ``prior x sites`` corrected back to
    the original prior by importance weights (draws outside the prior
    support get zero weight). The MAP is the mode of that Gaussian.
    """
    from .sober import InferenceResult, SoberConfig, run, sample_valid

    sober_config = sober_config or SoberConfig()
    schedule = schedule or EpSchedule(len(split), 2)
    split.validate_for(len(data))
    if model.dimension != prior.dimension:
        raise ValidationError(f"model {model.name} has {model.dimension} parameters, prior has {prior.dimension}")
    base = prior_site(prior)
    runs = []

    def tilted(j, cavity, update):
        cav = CavityPrior(prior.names, prior.is_log, cavity.mean, cavity.cov, prior)
        cfg = replace(sober_config, seed=sober_config.seed + 7919 * update)
        res = run(model, data.subset(split.features[j]), cav, cfg)
        runs.append(res)
        return moment_match(res.posterior_samples, prior)

    state = ep_iterate(base, len(split), tilted, schedule)
    post = state.posterior()
    if not post.is_positive_definite():
        raise NumericalError("EP posterior precision is not positive definite")
    gauss = GaussianPrior(prior.names, prior.is_log, post.mean, post.cov)
    approx_prior = GaussianPrior(prior.names, prior.is_log, base.mean, base.cov)
    n_final = int(n_final or sober_config.oversample * sober_config.pool_size(prior.dimension))
    rng = np.random.default_rng(sober_config.seed + 104729)
    draws = sample_valid(gauss, n_final, rng, lambda t: np.asarray(prior.in_support(t)) & model.valid(t))
    z = prior.to_transformed(draws)
    logw = prior.transformed_log_pdf(z) - approx_prior.transformed_log_pdf(z)
    w = np.exp(logw - logw.max())
    samples = WeightedPosteriorSamples(draws, w, tuple(prior.names))
    last = runs[-1]
    return InferenceResult(
        discrepancies=last.discrepancies,
        gp=last.gp,
        map=prior.from_transformed(post.mean[None, :])[0],
        posterior_samples=samples,
        evaluation_failures=sum(r.evaluation_failures for r in runs),
        epsilon_trace=[e for r in runs for e in r.epsilon_trace],
        log_discrepancy=last.log_discrepancy,
        details={"sites": state.sites, "updates": state.history, "alpha_f": schedule.alpha_f},
    )
