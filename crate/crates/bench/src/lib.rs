//! Fixtures shared by the benchmarks.

use advspur_core::covariance::QMatrixSpec;
use advspur_core::{AttackSpec, GaussianLinearModel, Norm};

/// The correlated-feature model with `m` features, `c` of them core.
pub fn model(m: usize, c: usize, eta: f64) -> GaussianLinearModel {
    QMatrixSpec::new(m, c, eta, 1.0)
        .expect("valid spec")
        .model(0.1)
        .expect("valid model")
}

pub fn attack(norm: Norm, epsilon: f64) -> AttackSpec {
    AttackSpec::new(norm, epsilon).expect("valid attack")
}
