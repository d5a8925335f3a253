"""Priors built from bound tables.

Every prior is defined per parameter by a transform (``identity`` or ``log``),
a family (``normal`` or ``uniform``) and a pair of bounds in physical units.
Normal priors are placed so that their central 95% interval in transformed
space touches the bounds; uniform priors are flat on the transformed interval
(so ``log`` + ``uniform`` is log-uniform).

All public methods take and return parameters in untransformed (physical)
units. Transforms are an internal detail.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .exceptions import ValidationError

#: two-sided 95% quantile of the standard normal distribution
Z_975 = 1.959964

TRANSFORMS = ("identity", "log")
FAMILIES = ("normal", "uniform")

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ParameterPrior:
    """One-dimensional prior on a single named parameter."""

    name: str
    transform: str
    family: str
    lower: float
    upper: float

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ValidationError(
                f"prior '{self.name}': transform must be one of {TRANSFORMS}, got {self.transform!r}"
            )
        if self.family not in FAMILIES:
            raise ValidationError(
                f"prior '{self.name}': family must be one of {FAMILIES}, got {self.family!r}"
            )
        lo, hi = float(self.lower), float(self.upper)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValidationError(f"prior '{self.name}': bounds must be finite")
        if lo >= hi:
            raise ValidationError(f"prior '{self.name}': lower bound {lo} must be < upper bound {hi}")
        if self.transform == "log" and lo <= 0:
            raise ValidationError(
                f"prior '{self.name}': log transform requires positive bounds, got lower={lo}"
            )
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def is_log(self) -> bool:
        return self.transform == "log"

    @property
    def transformed_bounds(self) -> tuple[float, float]:
        if self.is_log:
            return float(np.log(self.lower)), float(np.log(self.upper))
        return self.lower, self.upper

    @property
    def loc(self) -> float:
        """Mean of a normal prior (midpoint for uniform) in transformed space."""
        lo, hi = self.transformed_bounds
        return 0.5 * (lo + hi)

    @property
    def scale(self) -> float:
        """Standard deviation in transformed space.

        For the uniform family this is the standard deviation of the uniform
        distribution, not a parameter of it.
        """
        lo, hi = self.transformed_bounds
        if self.family == "normal":
            return (hi - lo) / (2.0 * Z_975)
        return (hi - lo) / np.sqrt(12.0)

    def transformed_log_pdf(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lo, hi = self.transformed_bounds
        if self.family == "normal":
            s = self.scale
            return -0.5 * ((z - self.loc) / s) ** 2 - np.log(s) - 0.5 * _LOG_2PI
        inside = (z >= lo) & (z <= hi)
        return np.where(inside, -np.log(hi - lo), -np.inf)

    def transformed_cdf(self, z: np.ndarray) -> np.ndarray:
        lo, hi = self.transformed_bounds
        if self.family == "normal":
            return stats.norm.cdf(z, loc=self.loc, scale=self.scale)
        return np.clip((np.asarray(z, dtype=float) - lo) / (hi - lo), 0.0, 1.0)


def _forward(theta: np.ndarray, is_log: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(is_log, np.log(np.where(is_log, theta, 1.0)), theta)


def _backward(z: np.ndarray, is_log: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.where(is_log, np.exp(np.where(is_log, z, 0.0)), z)


class _TransformedPrior:
    """Shared transform handling for priors defined in transformed space."""

    names: tuple[str, ...]
    is_log: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.names)

    d = dimension

    def to_transformed(self, theta) -> np.ndarray:
        return _forward(theta, self.is_log)

    def from_transformed(self, z) -> np.ndarray:
        return _backward(z, self.is_log)

    def _as_points(self, theta) -> tuple[np.ndarray, bool]:
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        theta = np.atleast_2d(theta)
        if theta.shape[-1] != self.dimension:
            raise ValidationError(
                f"parameter point has dimension {theta.shape[-1]}, prior has {self.dimension}"
            )
        return theta, single

    def _log_jacobian(self, theta: np.ndarray) -> np.ndarray:
        # d(ln θ)/dθ = 1/θ for each log-transformed coordinate
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(self.is_log, np.log(np.where(self.is_log, theta, 1.0)), 0.0)
        return -logs.sum(axis=-1)

    def positive_ok(self, theta: np.ndarray) -> np.ndarray:
        return np.all(np.where(self.is_log, theta > 0, True), axis=-1)


class MultivariatePrior(_TransformedPrior):
    """Product of independent :class:`ParameterPrior` components.

    Examples
    --------
    >>> prior = build_prior([("c", "identity", "uniform", (1.0, 1.2))])
    >>> round(float(prior.log_pdf([1.1])), 5)
    1.60944
    """

    def __init__(self, components: Sequence[ParameterPrior]):
        components = tuple(components)
        if not components:
            raise ValidationError("a prior needs at least one component")
        names = [c.name for c in components]
        if len(set(names)) != len(names):
            raise ValidationError(f"prior component names must be unique, got {names}")
        self.components = components
        self.names = tuple(names)
        self.is_log = np.array([c.is_log for c in components])

    def __repr__(self):
        parts = ", ".join(f"{c.name}:{c.transform}/{c.family}[{c.lower:g},{c.upper:g}]" for c in self.components)
        return f"MultivariatePrior({parts})"

    @property
    def transformed_mean(self) -> np.ndarray:
        return np.array([c.loc for c in self.components])

    @property
    def transformed_cov(self) -> np.ndarray:
        return np.diag([c.scale**2 for c in self.components])

    def sample(self, n: int, seed=None) -> np.ndarray:
        """Draw ``n`` independent points, shape ``(n, d)``, in physical units."""
        n = int(n)
        if n < 1:
            raise ValidationError(f"sample size must be >= 1, got {n}")
        rng = np.random.default_rng(seed)
        z = np.empty((n, self.dimension))
        for j, c in enumerate(self.components):
            if c.family == "normal":
                z[:, j] = rng.normal(c.loc, c.scale, size=n)
            else:
                lo, hi = c.transformed_bounds
                z[:, j] = rng.uniform(lo, hi, size=n)
        return self.from_transformed(z)

    def in_support(self, theta) -> np.ndarray | bool:
        pts, single = self._as_points(theta)
        ok = self.positive_ok(pts)
        z = self.to_transformed(pts)
        for j, c in enumerate(self.components):
            if c.family == "uniform":
                lo, hi = c.transformed_bounds
                ok &= (z[:, j] >= lo) & (z[:, j] <= hi)
        ok &= np.all(np.isfinite(z), axis=-1)
        return bool(ok[0]) if single else ok

    def transformed_log_pdf(self, z) -> np.ndarray | float:
        """Log density of the transformed coordinates (no Jacobian)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.zeros(z.shape[0])
        for j, c in enumerate(self.components):
            out += c.transformed_log_pdf(z[:, j])
        return out

    def log_pdf(self, theta) -> np.ndarray | float:
        """Log density in physical units, ``-inf`` outside the support."""
        pts, single = self._as_points(theta)
        out = np.full(pts.shape[0], -np.inf)
        ok = self.positive_ok(pts)
        if np.any(ok):
            z = self.to_transformed(pts[ok])
            out[ok] = self.transformed_log_pdf(z) + self._log_jacobian(pts[ok])
        return float(out[0]) if single else out

    def to_records(self) -> list[dict]:
        return [
            {"name": c.name, "transform": c.transform, "family": c.family, "lower": c.lower, "upper": c.upper}
            for c in self.components
        ]


class GaussianPrior(_TransformedPrior):
    """Full-covariance Gaussian in transformed space.

    Used for the cavity distributions of expectation propagation, which carry
    correlations that :class:`MultivariatePrior` cannot represent.
    """

    def __init__(self, names: Sequence[str], is_log, mean, cov):
        self.names = tuple(names)
        self.is_log = np.asarray(is_log, dtype=bool)
        self.mean = np.asarray(mean, dtype=float).reshape(-1)
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        d = len(self.names)
        if self.mean.shape != (d,) or self.cov.shape != (d, d):
            raise ValidationError("GaussianPrior: mean/cov shapes do not match the names")
        self.cov = 0.5 * (self.cov + self.cov.T)
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("GaussianPrior: covariance is not positive definite") from exc

    @classmethod
    def from_prior(cls, prior: MultivariatePrior) -> "GaussianPrior":
        """Moment-matched Gaussian approximation of a product prior."""
        return cls(prior.names, prior.is_log, prior.transformed_mean, prior.transformed_cov)

    @property
    def transformed_mean(self) -> np.ndarray:
        return self.mean

    @property
    def transformed_cov(self) -> np.ndarray:
        return self.cov

    def sample(self, n: int, seed=None) -> np.ndarray:
        n = int(n)
        if n < 1:
            raise ValidationError(f"sample size must be >= 1, got {n}")
        rng = np.random.default_rng(seed)
        z = self.mean + rng.standard_normal((n, self.dimension)) @ self._chol.T
        return self.from_transformed(z)

    def in_support(self, theta):
        pts, single = self._as_points(theta)
        ok = self.positive_ok(pts) & np.all(np.isfinite(pts), axis=-1)
        return bool(ok[0]) if single else ok

    def transformed_log_pdf(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r = np.linalg.solve(self._chol, (z - self.mean).T)
        logdet = 2.0 * np.log(np.diag(self._chol)).sum()
        return -0.5 * (r**2).sum(axis=0) - 0.5 * logdet - 0.5 * self.dimension * _LOG_2PI

    def log_pdf(self, theta):
        pts, single = self._as_points(theta)
        out = np.full(pts.shape[0], -np.inf)
        ok = self.positive_ok(pts)
        if np.any(ok):
            out[ok] = self.transformed_log_pdf(self.to_transformed(pts[ok])) + self._log_jacobian(pts[ok])
        return float(out[0]) if single else out


def build_prior(records: Iterable) -> MultivariatePrior:
    """Build a product prior from ``(name, transform, family, (lower, upper))``
    tuples or from ``{name, transform, family, lower, upper}`` mappings."""
    components = []
    for item in records:
        if isinstance(item, ParameterPrior):
            components.append(item)
        elif isinstance(item, Mapping):
            try:
                components.append(
                    ParameterPrior(
                        str(item["name"]),
                        str(item.get("transform", "identity")),
                        str(item.get("family", "normal")),
                        item["lower"],
                        item["upper"],
                    )
                )
            except KeyError as exc:
                raise ValidationError(f"prior record is missing field {exc.args[0]!r}: {dict(item)}") from None
        else:
            name, transform, family, bounds = item
            components.append(ParameterPrior(name, transform, family, bounds[0], bounds[1]))
    return MultivariatePrior(components)


def sample(prior, n: int, seed=None) -> np.ndarray:
    return prior.sample(n, seed)


def log_pdf(prior, theta):
    return prior.log_pdf(theta)
