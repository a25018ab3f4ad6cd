//! Gaussian filter and feature Gaussian filter for nonlinear state-space
//! models.
//!
//! The crate is organized bottom-up:
//!
//! - [`ssm`]: models `x' = g(x, v)`, `y = h(x, w)` with standard-normal noise,
//!   Gaussian beliefs, the two scalar benchmark systems and a simulator;
//! - [`quad`]: expectation engines (Monte Carlo, sigma points) over a belief
//!   times standard-normal noise;
//! - [`filter`]: prediction, joint moment matching, Gaussian conditioning and
//!   the feature filter's `Gamma` / `Sigma` solves;
//! - [`oracle`]: brute-force grid posteriors and the joint-vs-conditional KL
//!   objective, for scalar validation;
//! - [`experiment`]: seeded experiment runners and CSV reports.

pub mod config;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod linalg;
pub mod oracle;
pub mod quad;
pub mod rng;
pub mod ssm;

pub use error::{Error, Result};
pub use filter::{
    fgf_solve, fgf_update, filter_step, gf_update, joint_moments, make_affine_feature,
    make_monomial_feature, make_named_feature, predict, run_filter, FeatureFunction,
    FgfPosteriorParams, JointMoments, Standardization,
};
pub use quad::{expected_likelihood_weight, ExpectationEngine, PointSet, WeightEstimate};
pub use ssm::{
    make_heaviside_model, make_linear_gaussian_model, make_noise_magnitude_model, simulate,
    BuiltinModel, GaussianBelief, HeavisideParams, NoiseMagnitudeParams, StateSpaceModel,
    Trajectory,
};
