//! Adversarial training of Gaussian linear regression and its effect on
//! reliance on spurious features.
//!
//! The crate provides the closed-form population adversarial loss under
//! `l1`, `l2` and `l_inf` attacks ([`model`]), the correlated-feature
//! covariance family ([`covariance`]), a solver for adversarial training
//! ([`optimizer`]), independent Monte-Carlo and brute-force checks
//! ([`oracle`]), and the sweep harness that produces CSV tables
//! ([`experiments`]).

pub mod covariance;
pub mod error;
pub mod experiments;
pub mod model;
pub mod optimizer;
pub mod oracle;
pub mod projection;
pub mod rng;
pub mod validation;

pub use covariance::{
    build_q_tilde, covariance, normalize_rows, perturb_spurious_rows, sample_data,
    scale_spurious_rows, DataSampler, QMatrixSpec,
};
pub use error::{Error, Result};
pub use experiments::{
    run_nfs_sweep, run_plateau_sweep, run_scale_heatmap, run_shift_robustness, Experiment,
    SweepConfig, SweepRecord, SweepTable,
};
pub use model::{
    adversarial_loss_closed_form, dual_exponent, inner_max_value, sigma_theta, standard_loss,
    worst_case_delta, AttackSpec, GaussianLinearModel, LossConstants, Norm,
};
pub use optimizer::{
    minimize_adversarial_loss, nfs, spurious_reliance, subgradient, FitResult, Method,
    OptimizerOptions,
};
pub use oracle::{
    brute_force_inner_max, monte_carlo_adversarial_loss, shifted_standard_loss, OracleReport,
};
pub use validation::{run_validation, ValidationConfig, ValidationReport};
