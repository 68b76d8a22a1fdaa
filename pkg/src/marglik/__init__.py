"""marglik: marginal-likelihood estimation from training-trajectory statistics.

Exact conjugate Bayesian linear regression provides the ground truth;
sample-then-optimize trajectories, posterior-sample estimators, NTK-GP
evidence, and ensemble-weight selection reproduce it from sampled
training statistics.
"""

__version__ = "0.1.0"

from .blr import (
    BlrModel,
    Dataset,
    PosteriorState,
    condition,
    exact_log_evidence,
    posterior_step_kl,
    predictive,
    sequential_log_evidence,
)
from .ensemble import (
    DesignMatrix,
    WeightReport,
    build_design,
    closed_form_lemma_weights,
    least_squares_weights,
    selection_consistency,
    synth_lemma_instance,
)
from .estimators import (
    EvidenceReport,
    exact_report,
    l_hat,
    l_hat_k,
    l_hat_s,
    prop1_bias_check,
    sample_posterior_predictions,
    sotl_report,
)
from .gaussians import (
    Gaussian1D,
    GaussianND,
    kl_gaussian_nd,
    log_density_1d,
    log_mean_exp,
    sample_mvn,
)
from .ntk import (
    KernelMatrix,
    NtkSpec,
    gp_log_evidence,
    gp_posterior_function_sample,
    gp_sequential_evidence,
    mc_l_estimate_gp,
    ntk_gram,
    ntk_value,
)
from .sto import GdConfig, SumLossRecord, TrajectorySamples, perturb_targets, regularized_loss, run_trajectories, solve_prefix

__all__ = [
    "BlrModel",
    "Dataset",
    "DesignMatrix",
    "EvidenceReport",
    "Gaussian1D",
    "GaussianND",
    "GdConfig",
    "KernelMatrix",
    "NtkSpec",
    "PosteriorState",
    "SumLossRecord",
    "TrajectorySamples",
    "WeightReport",
    "build_design",
    "closed_form_lemma_weights",
    "condition",
    "exact_log_evidence",
    "exact_report",
    "gp_log_evidence",
    "gp_posterior_function_sample",
    "gp_sequential_evidence",
    "kl_gaussian_nd",
    "l_hat",
    "l_hat_k",
    "l_hat_s",
    "least_squares_weights",
    "log_density_1d",
    "log_mean_exp",
    "mc_l_estimate_gp",
    "ntk_gram",
    "ntk_value",
    "perturb_targets",
    "posterior_step_kl",
    "predictive",
    "prop1_bias_check",
    "regularized_loss",
    "run_trajectories",
    "sample_mvn",
    "sample_posterior_predictions",
    "selection_consistency",
    "sequential_log_evidence",
    "solve_prefix",
    "sotl_report",
    "synth_lemma_instance",
]
