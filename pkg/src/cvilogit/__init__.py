"""Conjugating variational inference for mixed logit choice models."""
from .choice import ChoiceDataset, ChoiceModel, ModelSpec, choice_probabilities, nearest_psd
from .errors import DatasetError, DomainError, NumericalError, StructuralError
from .evaluate import (bundle_marginal, bundle_pasta_marginal, elasticity_profile,
                       heterogeneity, log_score, marginal_share_probs, predictive_probs,
                       predictive_report, weighted_f1)
from .impute import ImputationPolicy, impute
from .io import FitConfig, load_artifact, load_dataset, save_artifact, save_dataset
from .params import ParameterLayout, PriorSpec, pack, unpack
from .simulate import DgpSpec, simulate_dataset, simulation1, simulation2, simulation3
from .vi import FitArtifact, ScheduleConfig, cvi_fit, davi_fit, elbo_estimate, refresh_local

__version__ = "0.1.0"
