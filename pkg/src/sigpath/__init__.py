"""Bayesian inference of signaling networks from single-cell intervention data."""

from .errors import CycleError, NumericalError, ValidationError
from .model import (
    ChainState,
    Condition,
    Dataset,
    Hyperparameters,
    InterventionDesign,
    ProteinPanel,
    log_joint,
    log_likelihood_block,
    log_prior,
)
from .sampler import PosteriorSummary, SamplerConfig, run_chain, run_chains, summarize

__version__ = "0.1.0"
