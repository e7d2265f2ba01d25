"""Nested shared-atom mixture models for grouped data, fitted by Gibbs sampling or CAVI."""
from .mcmc import McmcChains, McmcParams, run_mcmc
from .model import (
    DirichletSym, Family, GemPrior, GroupedData, ModelConfig, NigParams, default_config, nig_posterior,
    validate_dataset,
)
from .summaries import (
    compute_psm, estimate_G, estimate_partition, estimate_partition_mcmc, estimate_partition_vi,
    number_clusters, summarize_fit,
)
from .synthetic import ScenarioSpec, benchmark_scenario, generate
from .vi import ViFit, ViParams, run_cavi

__version__ = "0.1.0"
