//! Entropies, divergences and exploration utilities.

mod measures;
mod utility;

pub use measures::{
    gaussian_entropy, gaussian_kl, mean_scatter, moment_match, renyi2_entropy, renyi2_mixture_entropy,
    utility_entropy_samples, utility_jr, Covariance, GaussianPrediction, PSD_TOL,
};
pub use utility::{
    action_utility, laplace_information_gain, laplace_utility_rows, policy_utility_mc, precision_update_kl,
    utility_entropy_laplace, utility_rows, ActionScorer, UtilityKind, UtilitySpec,
};
