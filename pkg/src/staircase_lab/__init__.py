"""Spectral staircase estimation with Gaussian filters, unitary-overlap
quadrature, stochastic trace sampling, and smoothing post-processing."""

__version__ = "0.1.0"

from .model import (
    Eigensystem,
    HamiltonianMatrix,
    InitialState,
    LatticeSpec,
    ModelError,
    SpectrumModel,
    build_fermi_hubbard,
    build_synthetic_spectrum,
    diagonalize,
    eigensystem,
    make_initial_state,
)
from .exact_filter import (
    StaircaseCurve,
    accuracy_bound,
    default_lambda_grid,
    logistic_two_level,
    partition_exact,
    staircase_exact,
    tau_for_accuracy,
)
from .itqde import (
    OverlapSet,
    QuadratureRule,
    compute_overlaps,
    gauss_hermite_rule,
    mbar_for_precision,
    quadrature_error_bound,
    staircase_binomial,
    staircase_from_overlaps,
    staircase_quadrature,
    truncate_rule,
)
from .sampling import (
    EstimatorStats,
    SampleBatch,
    haar_moments,
    haar_state,
    ratio_error_prediction,
    resolvable_gap_from_K,
    sampled_overlaps,
    shot_budget_bound,
    with_measurement_noise,
)
from .smoothing import (
    SmoothingWindow,
    bias_bound,
    coarse_grain_to_gap,
    convolve,
    delta_lambda_for,
    tau_effective,
)
from .analysis import (
    StabilityReport,
    extract_plateaux,
    integrated_error,
    oscillation_diagnostic,
    scaling_collapse,
    stability_report,
)
