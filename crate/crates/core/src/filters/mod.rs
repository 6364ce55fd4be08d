//! Baseline estimators sharing the process and measurement models: an
//! error-state quaternion EKF, an iterated EKF, an unscented filter with
//! Mahalanobis outlier rejection, and the statics-based parameter UKF.

mod param;
mod qekf;
mod sigma;
mod ukf;

pub use param::{ukf_param_step, ParamBelief, ParamStepInfo};
pub use qekf::{iekf_mean_update, iekf_update, qekf_step, StepContext};
pub use sigma::{SigmaPoints, UtParams};
pub use ukf::{ukf_or_step, ukf_step, GateMode};

use crate::types::{floor_eigenvalues, RobotState, StateCovariance};

/// Eigenvalue floor applied to every covariance a filter emits.
pub const COVARIANCE_EIGEN_FLOOR: f64 = 1e-12;

/// 99% quantile of the χ² distribution with 6 degrees of freedom, the
/// default per-leg innovation gate.
pub const DEFAULT_GATE_THRESHOLD: f64 = 16.811893829770927;

/// Gaussian belief over the robot state: mean plus tangent-space covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    /// Mean state.
    pub mean: RobotState,
    /// Covariance over the tangent space at the mean.
    pub cov: StateCovariance,
}

impl GaussianBelief {
    /// New belief; the covariance is symmetrized and floored.
    pub fn new(mean: RobotState, mut cov: StateCovariance) -> GaussianBelief {
        floor_eigenvalues(&mut cov, COVARIANCE_EIGEN_FLOOR);
        GaussianBelief { mean, cov }
    }
}

/// Per-step diagnostics shared by the filter implementations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepDiagnostics {
    /// Legs whose rows were rejected by an outlier gate this step.
    pub gated_legs: [bool; crate::types::NUM_LEGS],
    /// Smallest covariance eigenvalue observed before flooring.
    pub min_covariance_eigenvalue: f64,
    /// Iterations used by an iterative update, when applicable.
    pub iterations: usize,
}
