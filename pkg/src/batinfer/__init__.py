"""Likelihood-free Bayesian parameter estimation and model selection for
expensive simulators, built on Gaussian-process surrogates of a discrepancy."""

__version__ = "0.1.0"

from .analysis import PosteriorSummary, WeightedPosteriorSamples, covariance_grid, predictive_posterior, summarize
from .basq import (
    EvidenceEstimate,
    QuadratureNodes,
    build_nodes,
    compare_models,
    dimensionality_correction,
    estimate_evidence,
    estimate_evidence_exact_likelihood,
    evidence_from_run,
)
from .distributions import GaussianPrior, MultivariatePrior, ParameterPrior, build_prior
from .ep import EpSchedule, FeatureSplit, SiteApproximation, compute_feature_dampening, damped_update, ep_run
from .exceptions import BatinferError, EvaluationError, NumericalError, ValidationError
from .gis import GisConfig, InverseSurrogate, train
from .gp import GPRegressor, KernelConfig
from .lfi import DiscrepancyDataset, DiscrepancyRecord, pseudo_likelihood, rmse_discrepancy, update_epsilon
from .models import Dataset, ForwardModel, default_prior, get_model
from .sober import InferenceResult, SoberConfig, SoberInference, run, select_batch

__all__ = [name for name in dir() if not name.startswith("_")]
