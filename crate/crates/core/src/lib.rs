//! Tweedie scaling of Gaussian denoisers, optimal-scale estimation and
//! plug-and-play proximal gradient descent, on Gaussian-mixture priors whose
//! MMSE denoisers are known in closed form.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod denoiser;
pub mod error;
pub mod experiments;
pub mod linop;
pub mod prior;
pub mod random;
pub mod report;
pub mod selftest;
pub mod signal;
pub mod solver;

pub use analysis::{
    delta_sweep, estimate_delta_opt, estimate_l2, verify_sandwich, DeltaOptEstimate, L2Estimate, SandwichReport,
};
pub use denoiser::{
    estimate_lipschitz, gamma, homogeneous_scale, tweedie_scale, Denoise, Denoiser, ScaledDenoiser, ScalingMode,
};
pub use error::{Error, Result};
pub use experiments::{
    run_experiment, ExperimentName, ExperimentOutput, ExperimentRecord, ExperimentSpec, ResolvedSpec,
};
pub use linop::{gradient_step, ForwardOperator, OperatorSpec};
pub use prior::{GmmPrior, NoiseModel, SamplePair, SampleSet};
pub use signal::Signal;
pub use solver::{
    averagedness_theta, compose_averaged, linear_fixed_point_oracle, pnp_pgd, AffinePnp, FixedPointResult, PnpConfig,
};
