"""Normalized power-mean pooling of probability distributions."""

from .errors import AccuracyError, CapacityError, DegeneracyError, GenMeanError, InvalidInputError
from .powermean import PowerOrder, as_order, log_power_mean, logsumexp, power_mean
from .discrete import (
    AggregatedLogProbs,
    WisdomGapReport,
    aggregate,
    aggregate_batch,
    cross_entropy,
    extreme_counterexamples,
    individual_nll_baseline,
    near_consensus_perturb,
    wisdom_gap,
)
from .gaussian import (
    GaussianDensity,
    IntegrationConfig,
    NormalizationResult,
    aggregated_log_density,
    log_z_geometric,
    log_z_numeric,
    log_z_reciprocal,
    normalize,
    weighted_geo_product,
    wisdom_gap_continuous,
)
from .harness import (
    EnsembleDataset,
    SweepResult,
    load_dataset,
    save_dataset,
    save_result,
    load_result,
    sweep_discrete,
    sweep_gaussian,
    synth_ensemble,
)

__version__ = "0.1.0"
