"""Model evidence with uncertainty, and model comparison.

The evidence is the prior expectation of the likelihood. Its uncertainty is
obtained by drawing whole functions from the discrepancy GP at a set of
quadrature nodes: each draw is a plausible discrepancy surface, which turns
into a deterministic acceptance indicator and hence one evidence value. The
spread of those values is the reported variance. This functional-sampling
estimator stands in for BASQ's kernel-quadrature posterior over the
integral.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp, ndtr

from .exceptions import NumericalError, ValidationError

#: residual standard deviation used to smooth the indicator of a sampled function
DRAW_RESIDUAL_SD = 1e-6


@dataclass(frozen=True)
class QuadratureNodes:
    """Integration nodes with weights.

    With ``normalized`` (prior draws) the weights sum to one. Importance
    nodes carry unbiased weights ``p / (q m)`` instead, whose sum is one
    only in expectation.
    """

    nodes: np.ndarray
    weights: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if nodes.shape[0] != w.size:
            raise ValidationError("one weight per node is required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("node weights must be finite and non-negative")
        if self.normalized and not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValidationError("normalized node weights must sum to 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size


@dataclass(frozen=True)
class EvidenceEstimate:
    mean: float
    variance: float
    n_nodes: int
    n_function_draws: int = 0
    corrected_for_dims: int = 0

    @property
    def std(self) -> float:
        return float(np.sqrt(max(self.variance, 0.0)))

    @property
    def reliable(self) -> bool:
        """Usable for ranking only when the standard deviation is below the mean."""
        return bool(self.std < self.mean)

    def to_dict(self, label: str) -> dict:
        return {
            "label": label,
            "mean": float(self.mean),
            "variance": float(self.variance),
            "n_nodes": int(self.n_nodes),
            "reliable": self.reliable,
            "corrected_for_dims": int(self.corrected_for_dims),
        }


def default_node_count(d: int) -> int:
    return 3**int(d)


def build_nodes(prior, m: int, seed=None, proposal=None, defensive: float = 0.0) -> QuadratureNodes:
    """``m`` quadrature nodes for integrals against ``prior``.

    Without a ``proposal`` the nodes are prior draws with uniform weights.
    With one (a :class:`GaussianPrior` concentrated where the likelihood
    lives) a fraction ``defensive`` of the nodes comes from the prior and
    the rest from the proposal restricted to the prior support. The weights
    are the importance ratios ``p / (q m)`` for the resulting mixture ``q``,
    so the quadrature is unbiased but only covers what ``q`` reaches.
    """
    m = int(m)
    if m < 2:
        raise ValidationError("at least 2 quadrature nodes are required")
    if proposal is None:
        nodes = prior.sample(m, seed)
        return QuadratureNodes(nodes, np.full(m, 1.0 / m))
    if not 0.0 <= defensive < 1.0:
        raise ValidationError("defensive share must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    n_prior = int(round(defensive * m))
    n_prop = m - n_prior
    kept, drawn = [], 0
    while sum(k.shape[0] for k in kept) < n_prop:
        draw = proposal.sample(max(n_prop, 64), rng)
        drawn += draw.shape[0]
        kept.append(draw[np.asarray(prior.in_support(draw), dtype=bool)])
        if drawn > 1000 * max(n_prop, 64):
            raise ValidationError("the evidence proposal has almost no overlap with the prior support")
    accept = sum(k.shape[0] for k in kept) / drawn
    parts = [np.vstack(kept)[:n_prop]]
    if n_prior:
        parts.insert(0, prior.sample(n_prior, rng))
    nodes = np.vstack(parts)
    z = prior.to_transformed(nodes)
    log_p = prior.transformed_log_pdf(z)
    log_q = proposal.transformed_log_pdf(z) - np.log(accept) + np.log1p(-n_prior / m)
    if n_prior:
        log_q = np.logaddexp(np.log(n_prior / m) + log_p, log_q)
    return QuadratureNodes(nodes, np.exp(log_p - log_q) / m, normalized=False)


def posterior_proposal(prior, samples, inflation: float = 2.0):
    """Gaussian in transformed coordinates matched to weighted posterior
    samples, with standard deviations widened by ``inflation``."""
    from .analysis import WeightedPosteriorSamples, weighted_moments
    from .distributions import GaussianPrior

    z = WeightedPosteriorSamples(prior.to_transformed(samples.samples), samples.weights)
    mean, cov = weighted_moments(z)
    cov = inflation**2 * cov + 1e-6 * np.diag(np.diag(prior.transformed_cov))
    return GaussianPrior(prior.names, prior.is_log, mean, cov)


def discrepancy_proposal(prior, thetas, deltas, epsilon: float, inflation: float = 1.0):
    """Gaussian proposal fitted to the evaluated points with discrepancy at
    most ``epsilon`` (at least ``4 d`` of the best points are used)."""
    from .analysis import WeightedPosteriorSamples

    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    deltas = np.asarray(deltas, dtype=float).reshape(-1)
    if thetas.shape[0] != deltas.size or deltas.size == 0:
        raise ValidationError("need one discrepancy per evaluated point")
    keep = np.flatnonzero(deltas <= epsilon)
    n_min = min(deltas.size, 4 * prior.dimension)
    if keep.size < n_min:
        keep = np.argsort(deltas, kind="stable")[:n_min]
    chosen = thetas[keep]
    return posterior_proposal(prior, WeightedPosteriorSamples(chosen, np.ones(len(chosen))), inflation)


def shared_threshold(epsilons: Sequence[float], slack: float = 0.1) -> float:
    """Common acceptance threshold for comparing models: the largest of the
    per-model thresholds, widened by ``slack``. Every model has then been
    seen to reach it, and all evidences measure the same event."""
    eps = np.asarray(list(epsilons), dtype=float)
    if eps.size == 0 or not np.all(np.isfinite(eps)) or np.any(eps < 0):
        raise ValidationError("thresholds must be finite and non-negative")
    if slack < 0:
        raise ValidationError("slack must be >= 0")
    return float(eps.max() * (1.0 + slack))


def estimate_evidence(gp, epsilon: float, nodes: QuadratureNodes, n_function_draws: int = 256, seed=None, valid=None) -> EvidenceEstimate:
    """Evidence of the pseudo-likelihood ``P(discrepancy <= epsilon)``.

    ``gp`` models the discrepancy on the same scale as ``epsilon``. Nodes
    rejected by ``valid`` (parameters the model cannot simulate) contribute
    zero likelihood. The variance combines the spread of the estimate
    across GP function draws with the quadrature error of the nodes.
    """
    n_function_draws = int(n_function_draws)
    if n_function_draws < 16:
        raise ValidationError("n_function_draws must be >= 16")
    pts, w = nodes.nodes, nodes.weights
    ok = np.ones(pts.shape[0], dtype=bool) if valid is None else np.asarray(valid(pts), dtype=bool)
    if not np.any(ok):
        return EvidenceEstimate(0.0, 0.0, len(nodes), n_function_draws)
    draws = gp.sample_functions(pts[ok], n_function_draws, seed)
    lik = np.zeros((n_function_draws, pts.shape[0]))
    lik[:, ok] = ndtr((epsilon - draws) / DRAW_RESIDUAL_SD)
    per_draw = lik @ w
    # law of total variance: spread across GP draws plus the node error of each draw
    node_var = np.mean((lik - per_draw[:, None]) ** 2 @ w**2)
    return EvidenceEstimate(
        mean=float(per_draw.mean()),
        variance=float(per_draw.var(ddof=1) + node_var),
        n_nodes=len(nodes),
        n_function_draws=n_function_draws,
    )


def estimate_evidence_exact_likelihood(loglik: Callable, nodes: QuadratureNodes) -> EvidenceEstimate:
    """Quadrature of a closed-form likelihood; the variance is the
    Monte-Carlo variance of the weighted mean."""
    ll = np.array([float(loglik(theta)) for theta in nodes.nodes])
    if not np.all(np.isfinite(ll) | (ll == -np.inf)):
        raise ValidationError("log-likelihood must be finite or -inf on the nodes")
    w = nodes.weights
    with np.errstate(divide="ignore"):
        log_mean = logsumexp(ll, b=w)
    if log_mean > np.log(np.finfo(float).max) / 2:
        raise NumericalError("evidence overflows double precision; subtract a constant from the log-likelihood")
    mean = float(np.exp(log_mean))
    # scaled to avoid overflow: sum w (L - mean)^2 = exp(2 c) sum w (exp(ll - c) - exp(log_mean - c))^2
    c = float(np.max(ll)) if np.any(np.isfinite(ll)) else 0.0
    scaled = np.exp(ll - c) - np.exp(log_mean - c)
    variance = float(np.exp(2 * c) * np.sum(w * scaled**2) / len(nodes))
    return EvidenceEstimate(mean, variance, len(nodes), 0)


def dimensionality_correction(evidence: EvidenceEstimate, d_small: int, d_large: int) -> EvidenceEstimate:
    """Scale the evidence of the lower-dimensional model by ``(2 pi)^((d_large - d_small)/2)``."""
    if d_large < d_small:
        raise ValidationError("d_large must be >= d_small")
    gap = int(d_large) - int(d_small)
    factor = (2.0 * np.pi) ** (gap / 2.0)
    return replace(
        evidence,
        mean=evidence.mean * factor,
        variance=evidence.variance * factor**2,
        corrected_for_dims=evidence.corrected_for_dims + gap,
    )


@dataclass(frozen=True)
class RankedModel:
    label: str
    rank: int
    mean: float
    variance: float
    relative_percent: float
    reliable: bool
    tie: bool

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "rank": self.rank,
            "mean": self.mean,
            "variance": self.variance,
            "relative_percent": self.relative_percent,
            "reliable": self.reliable,
            "tie": self.tie,
        }


def compare_models(estimates: Sequence[tuple[str, EvidenceEstimate]], reference: str | None = None) -> list[RankedModel]:
    """Rank models by mean evidence, highest first.

    ``relative_percent`` is each mean relative to the ``reference`` model
    (default: the first one given). Equal means keep their input order and
    are flagged as ties.
    """
    estimates = list(estimates)
    if len(estimates) < 2:
        raise ValidationError("compare_models needs at least two estimates")
    labels = [lab for lab, _ in estimates]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"model labels must be unique, got {labels}")
    ref_label = labels[0] if reference is None else reference
    if ref_label not in labels:
        raise ValidationError(f"reference model {ref_label!r} not among {labels}")
    ref_mean = dict(estimates)[ref_label].mean
    means = [est.mean for _, est in estimates]
    order = sorted(range(len(estimates)), key=lambda i: -means[i])
    out = []
    for rank, i in enumerate(order, start=1):
        label, est = estimates[i]
        rel = 100.0 * est.mean / ref_mean if ref_mean > 0 else float("nan")
        tie = sum(m == est.mean for m in means) > 1
        out.append(RankedModel(label, rank, float(est.mean), float(est.variance), rel, est.reliable, tie))
    return out


def evidence_from_run(
    result,
    prior,
    epsilon: float | None = None,
    n_nodes: int | None = None,
    seed=None,
    valid=None,
    defensive: float = 0.0,
    inflation: float = 1.5,
    n_function_draws: int = 256,
) -> EvidenceEstimate:
    """Evidence of a finished inference run at threshold ``epsilon``
    (default: the run's own threshold).

    Nodes are importance draws from a Gaussian fitted to the evaluated
    points that reached ``epsilon`` (optionally mixed with a ``defensive``
    share of prior draws). Far from every evaluation the GP only reverts to
    its mean and its draws would accept spuriously; restricting the nodes
    to the region the evaluations support keeps that out of the estimate. ``seed`` must differ from the run's design seed, otherwise
    the nodes replay already evaluated points.
    """
    from .sober import to_gp_scale

    epsilon = result.epsilon if epsilon is None else float(epsilon)
    n_nodes = default_node_count(prior.dimension) if n_nodes is None else int(n_nodes)
    data = result.discrepancies
    proposal = discrepancy_proposal(prior, data.thetas, data.deltas, epsilon, inflation)
    ss = np.random.SeedSequence(seed)
    node_seed, draw_seed = ss.spawn(2)
    nodes = build_nodes(prior, n_nodes, np.random.default_rng(node_seed), proposal, defensive)
    return estimate_evidence(
        result.gp,
        to_gp_scale(epsilon, result.log_discrepancy),
        nodes,
        n_function_draws,
        np.random.default_rng(draw_seed),
        valid,
    )


def run_selection(
    candidates,
    data,
    sober_config,
    n_nodes: int | None = None,
    slack: float = 0.1,
    n_function_draws: int = 256,
    defensive: float = 0.0,
    inflation: float = 1.5,
    shared: bool = True,
) -> tuple[list, float, dict]:
    """Fit every candidate and estimate its evidence at a common threshold.

    ``candidates`` maps a label to ``(model, prior)``. Returns the
    ``(label, EvidenceEstimate)`` list in input order, the threshold used
    (``shared_threshold`` over the runs, or the first run's own threshold
    widened by ``slack`` when ``shared`` is off) and the inference results.
    Evidence nodes for candidate ``i`` use the seed ``[seed, 1, i]``, a
    stream separate from the design draws.
    """
    from .sober import run

    candidates = dict(candidates)
    results = {label: run(model, data, prior, sober_config) for label, (model, prior) in candidates.items()}
    own = [r.epsilon for r in results.values()]
    threshold = shared_threshold(own, slack) if shared else shared_threshold(own[:1], slack)
    estimates = []
    for i, (label, res) in enumerate(results.items()):
        model, prior = candidates[label]
        eps = threshold if shared else res.epsilon * (1.0 + slack)
        est = evidence_from_run(
            res, prior, eps, n_nodes, [int(sober_config.seed), 1, i], model.valid, defensive, inflation, n_function_draws
        )
        estimates.append((label, est))
    return estimates, threshold, results
