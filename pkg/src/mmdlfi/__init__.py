"""Kernel MMD testing for likelihood-free signal detection.

The library covers the full pipeline: unbiased kernel statistics for
comparing a test sample against two simulator samples, a projection test
with a data-dependent threshold, subsampling-based null calibration with
p-values and discovery significances, trainable deep kernels with exact
gradients, closed-form sample-complexity planners, and a Monte Carlo harness
for mapping the trade-off between simulation and experimentation budgets.
"""

__version__ = "0.1.0"

from .data import (
    DatasetSplit,
    DiscreteDistribution,
    RandomSource,
    Sample,
    load_sample,
    sample_discrete,
    sample_mixture,
    save_sample,
    subsample_without_replacement,
)
from .kernels import (
    DeepG,
    DeepM,
    DeepO,
    DiscreteIdentity,
    FeatureNet,
    Gaussian,
    Kernel,
    ProductWitness,
    Scaled,
    SpectralDecomposition,
    eigendecompose,
    load_kernel,
    median_heuristic,
    save_kernel,
)
from .stats import (
    gamma_threshold,
    mmd_u_squared,
    objective_J,
    t_statistic,
    u_inner,
    ume_statistic,
    variance_estimator,
    witness_score,
    witness_scores,
)
from .inference import (
    CalibrationTable,
    TestDecision,
    boosted_test,
    calibrate_null,
    estimate_p_value,
    gaussian_error_rates,
    load_calibration,
    optimize_threshold,
    psi_test,
    required_batches,
    save_calibration,
    significance_binomial,
    significance_gaussian,
)
from .training import (
    TrainConfig,
    TrainReport,
    adam_step,
    grad_objective,
    initialize_kernel,
    train_kernel,
)
from .theory import (
    BoundResult,
    ProblemParams,
    exact_moments_discrete,
    jstar_certified,
    lambda_norms,
    lower_bound_planner,
    upper_bound_planner,
)
from .experiments import (
    ErrorGrid,
    ToyInstance,
    contour_asymmetry,
    extract_contour,
    make_toy,
    power_curve,
    tradeoff_sweep,
)
