//! Fixtures shared by the benchmarks.

use fgf_core::{
    joint_moments, make_monomial_feature, make_noise_magnitude_model, ExpectationEngine,
    GaussianBelief, JointMoments, StateSpaceModel,
};
use nalgebra::DVector;

pub use fgf_core;

/// The noise-magnitude model with its prior and a fixed measurement.
pub struct Scenario {
    pub model: StateSpaceModel,
    pub prior: GaussianBelief,
    pub measurement: DVector<f64>,
}

pub fn noise_magnitude() -> Scenario {
    let (model, prior) = make_noise_magnitude_model();
    Scenario {
        model,
        prior,
        measurement: DVector::from_element(1, 3.2),
    }
}

/// Joint moments of the noise-magnitude prior under a monomial feature of
/// the given order.
pub fn moments(order: usize, engine: &ExpectationEngine) -> JointMoments {
    let s = noise_magnitude();
    let feature = make_monomial_feature(1, order).expect("valid order");
    joint_moments(&s.prior, &s.model, &feature, engine).expect("finite moments")
}
