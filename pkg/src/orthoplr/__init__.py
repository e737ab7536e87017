"""Treatment-effect estimation under partially linear regression with
first- and second-order orthogonal moments, a Lasso first stage, and a
Monte Carlo experiment harness."""

from .dgp import (
    Dataset,
    NoiseDistribution,
    PLRInstance,
    default_discrete_eta,
    exact_noise_moments,
    generate_dataset,
    generate_instance,
)
from .estimator import (
    DegenerateJacobianError,
    EstimateReport,
    EstimatorConfig,
    confidence_interval,
    cross_fit_estimate,
    estimate_variance,
    sample_split_estimate,
    solve_theta,
)
from .harness import (
    ExperimentConfig,
    MCResults,
    desk_preset,
    paper_preset,
    run_monte_carlo,
    sweep,
    write_results,
)
from .lasso import (
    LassoConfig,
    LassoFit,
    kkt_residual,
    lambda_experiment,
    lambda_theory,
    lasso_fit,
    soft_threshold,
)
from .moments import (
    MomentSpec,
    NuisanceEstimate,
    NuisancePoint,
    dalpha_moment,
    dtheta_moment,
    estimate_residual_moments,
    moment_first_order,
    moment_second_order,
)
from .ortho_check import (
    CheckResult,
    OrthogonalitySet,
    conditional_orthogonality_check,
    finite_diff_differential,
    jacobian_degeneracy_scan,
    orthogonality_set,
)
from .rng import derive_rng, make_rng

__version__ = "0.1.0"
