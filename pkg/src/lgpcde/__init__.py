"""Conditional density estimation with Voronoi partitions and logistic Gaussian processes.

The covariate space is split by a weighted Voronoi tessellation whose
centers are observed points; the tessellation is sampled by
reversible-jump MCMC.  Within each region the response density is a
logistic Gaussian process fitted by a Laplace approximation.
"""

from .errors import (
    ArgumentError,
    CDEError,
    ConvergenceError,
    DataError,
    EmptyDataError,
    FitError,
    InvalidStateError,
    MissingColumnError,
    NumericalError,
    OutOfSupportError,
    UnreadableFileError,
)
from .lgp import (
    BasisPrior,
    BinnedCounts,
    Grid,
    HyperCache,
    KernelParams,
    RegionFit,
    basis_matrix,
    bin_counts,
    build_grid,
    density_draws,
    fit_region,
    kernel_matrix,
    log_likelihood,
    log_marginal,
    map_hyperparams,
    newton_mode,
    prior_covariance,
)
from .mcmc import Chain, ChainSample, McmcConfig, log_accept_ratio, propose, run_chain, select_best
from .posterior import (
    DensityEstimate,
    PartitionSummary,
    axis_changepoints,
    extract_changepoints,
    summarize_density,
    summarize_partition,
    weight_report,
)
from .simulate import SCENARIOS, simulate, simulate_raw
from .tessellation import (
    Dataset,
    RegionAssignment,
    Tessellation,
    assign_regions,
    partition_symmdiff_estimate,
    standardize,
    tessellation_log_prior,
    weighted_sq_norm,
)

__version__ = "0.1.0"
