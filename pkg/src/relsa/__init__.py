"""Reliability sensitivity from KL-minimal perturbations of input densities.

A single Monte Carlo design is reweighted to estimate how the failure
probability reacts when the mean or the variance of one input law is moved,
with delta-method confidence intervals.  FORM importance factors and Sobol'
indices of the failure indicator are provided for comparison.
"""

from relsa.baselines import (
    DesignPoint,
    SobolEstimate,
    hlrf_design_point,
    importance_factors,
    iso_transform,
    sobol_pick_freeze,
)
from relsa.distributions import (
    DistributionSpec,
    Gumbel,
    Normal,
    Triangular,
    Truncated,
    Uniform,
    parse_literal,
)
from relsa.estimation import (
    IndexEstimate,
    MonteCarloDesign,
    ProbabilityEstimate,
    SensitivityCurve,
    compute_index,
    compute_sensitivity_curve,
    estimate_failure_probability,
    estimate_index,
    estimate_joint_covariance,
    index_confidence_interval,
    reverse_is_estimate,
    run_design,
)
from relsa.models import FailureModel, flood, get_model, hyperplane, ishigami_threshold
from relsa.perturbation import (
    MomentConstraint,
    PerturbedDensity,
    build_perturbed_density,
    mean_shift,
    mean_shift_sigma,
    variance_shift,
)

__version__ = "0.1.0"
