//! Error-state quaternion EKF and its iterated variant.

use crate::error::{Error, Result};
use crate::kinematics::{LegParams, RobotGeometry};
use crate::measurement::{
    inflate_covariance, leg_row_mask, measure, measurement_jacobian, sigma_with_param_uncertainty,
};
use crate::process::{process_jacobian, process_noise_for_contacts, propagate, ControlInput};
use crate::types::{
    floor_eigenvalues, symmetrize, MeasCovariance, SensorFrame, StateCovariance,
};

use super::{GaussianBelief, StepDiagnostics, COVARIANCE_EIGEN_FLOOR};

/// Everything a state-filter step needs besides the belief itself.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Leg parameters (calf lengths) to evaluate the measurement model at.
    pub params: &'a LegParams,
    /// Fixed leg geometry.
    pub geometry: &'a RobotGeometry,
    /// Noise configuration.
    pub noise: &'a crate::types::NoiseConfig,
    /// Variance inflation factor for non-contact legs' measurement rows.
    pub row_inflation: f64,
    /// Process-noise inflation for swing legs' foot blocks.
    pub foot_inflation: f64,
    /// Parameter belief covariance folded into the measurement covariance.
    pub param_cov: crate::types::ParamCovariance,
}

impl<'a> StepContext<'a> {
    /// Effective measurement covariance at `x`: base Σ widened by the
    /// parameter uncertainty, with non-contact rows inflated.
    pub fn effective_sigma(
        &self,
        x: &crate::types::RobotState,
        frame: &SensorFrame,
    ) -> MeasCovariance {
        let widened = sigma_with_param_uncertainty(
            &self.noise.measurement,
            x,
            frame,
            self.params,
            self.geometry,
            &self.param_cov,
        );
        inflate_covariance(&widened, &leg_row_mask(frame), self.row_inflation)
    }

    /// Per-frame process covariance: foot blocks world-rotated, swing legs
    /// inflated.
    pub fn process_noise(
        &self,
        orientation: &crate::types::Quat,
        frame: &SensorFrame,
    ) -> crate::types::StateCovariance {
        process_noise_for_contacts(
            orientation,
            &self.noise.process,
            &leg_row_mask(frame),
            self.foot_inflation,
        )
    }
}

/// One EKF predict + update step.
pub fn qekf_step(
    belief: &GaussianBelief,
    u: &ControlInput,
    frame: &SensorFrame,
    ctx: &StepContext,
) -> Result<(GaussianBelief, StepDiagnostics)> {
    // Predict.
    let f = process_jacobian(&belief.mean, u, &ctx.noise.gravity);
    let predicted_mean = propagate(&belief.mean, u, &ctx.noise.gravity)?;
    let q_world = ctx.process_noise(&belief.mean.orientation, frame);
    let mut p_pred: StateCovariance = f * belief.cov * f.transpose() + q_world;
    symmetrize(&mut p_pred);

    // Update against the zero pseudo-measurement.
    let sigma = ctx.effective_sigma(&predicted_mean, frame);
    let residual = measure(&predicted_mean, frame, ctx.params, ctx.geometry);
    let h = measurement_jacobian(&predicted_mean, frame, ctx.params, ctx.geometry);

    let s = h * p_pred * h.transpose() + sigma;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::numerical("innovation covariance not invertible"))?;
    // K = P Hᵀ S⁻¹, via Kᵀ = S⁻¹ H P.
    let k = chol.solve(&(h * p_pred)).transpose();
    let correction = k * (-residual);

    let mean = predicted_mean.retract(&correction);
    // Joseph form keeps the update numerically symmetric.
    let ikh = StateCovariance::identity() - k * h;
    let mut cov = ikh * p_pred * ikh.transpose() + k * sigma * k.transpose();
    let min_eig = floor_eigenvalues(&mut cov, COVARIANCE_EIGEN_FLOOR);

    Ok((
        GaussianBelief { mean, cov },
        StepDiagnostics {
            gated_legs: [false; crate::types::NUM_LEGS],
            min_covariance_eigenvalue: min_eig,
            iterations: 1,
        },
    ))
}

/// Iterated-EKF mean update in MAP form against a prior mean/covariance
/// pair; the caller owns the covariance recursion. Gauss-Newton on the
/// quadratic objective `½‖x ⊟ prior‖²_{P⁻¹} + ½‖h(x)‖²_{Σ⁻¹}`,
/// relinearizing both the measurement and the orientation chart at every
/// iterate. Returns the converged mean and the iteration count.
pub fn iekf_mean_update(
    prior_mean: &crate::types::RobotState,
    prior_cov: &StateCovariance,
    sigma: &MeasCovariance,
    frame: &SensorFrame,
    ctx: &StepContext,
    max_iterations: usize,
    step_tolerance: f64,
) -> Result<(crate::types::RobotState, usize)> {
    use crate::types::{blocks, so3_right_jacobian_inv};
    let info = prior_cov
        .cholesky()
        .ok_or_else(|| Error::numerical("prior covariance not invertible"))?
        .solve(&StateCovariance::identity());
    let sigma_inv = sigma
        .cholesky()
        .ok_or_else(|| Error::numerical("measurement covariance not invertible"))?
        .solve(&MeasCovariance::identity());

    let mut x = *prior_mean;
    let mut iterations = 0;
    for _ in 0..max_iterations {
        iterations += 1;
        let h = measurement_jacobian(&x, frame, ctx.params, ctx.geometry);
        let residual = measure(&x, frame, ctx.params, ctx.geometry);
        let offset = prior_mean.local(&x);
        // Chart Jacobian: identity except the orientation block.
        let mut chart = StateCovariance::identity();
        let e_theta = nalgebra::Vector3::new(
            offset[blocks::DTHETA],
            offset[blocks::DTHETA + 1],
            offset[blocks::DTHETA + 2],
        );
        chart
            .fixed_view_mut::<3, 3>(blocks::DTHETA, blocks::DTHETA)
            .copy_from(&so3_right_jacobian_inv(&e_theta));

        let grad = h.transpose() * sigma_inv * residual + chart.transpose() * info * offset;
        let hess = h.transpose() * sigma_inv * h + chart.transpose() * info * chart;
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::numerical("normal equations not solvable"))?
            .solve(&(-grad));
        x = x.retract(&step);
        if step.norm() < step_tolerance {
            break;
        }
    }
    Ok((x, iterations))
}

/// Iterated-EKF measurement update: Gauss-Newton on the classical MAP
/// objective, relinearizing the measurement at every iterate.
///
/// `prior` is the predicted belief; the update starts at its mean.
pub fn iekf_update(
    prior: &GaussianBelief,
    frame: &SensorFrame,
    ctx: &StepContext,
    max_iterations: usize,
    step_tolerance: f64,
) -> Result<(GaussianBelief, StepDiagnostics)> {
    let sigma = ctx.effective_sigma(&prior.mean, frame);
    let p = prior.cov;
    let mut x = prior.mean;
    let mut iterations = 0;
    let mut last_h = measurement_jacobian(&x, frame, ctx.params, ctx.geometry);
    for _ in 0..max_iterations {
        iterations += 1;
        let h = measurement_jacobian(&x, frame, ctx.params, ctx.geometry);
        last_h = h;
        let residual = measure(&x, frame, ctx.params, ctx.geometry);
        let offset = prior.mean.local(&x);
        let s = h * p * h.transpose() + sigma;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::numerical("innovation covariance not invertible"))?;
        let k = chol.solve(&(h * p)).transpose();
        // d* = K(y - h(x_j) + H d_j) with y = 0.
        let target = k * (-residual + h * offset);
        let next = prior.mean.retract(&target);
        let step = x.local(&next);
        x = next;
        if step.norm() < step_tolerance {
            break;
        }
    }
    // Joseph-form covariance at the final linearization point.
    let s = last_h * p * last_h.transpose() + sigma;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::numerical("innovation covariance not invertible"))?;
    let k = chol.solve(&(last_h * p)).transpose();
    let ikh = StateCovariance::identity() - k * last_h;
    let mut cov = ikh * p * ikh.transpose() + k * sigma * k.transpose();
    let min_eig = floor_eigenvalues(&mut cov, COVARIANCE_EIGEN_FLOOR);
    Ok((
        GaussianBelief { mean: x, cov },
        StepDiagnostics {
            gated_legs: [false; crate::types::NUM_LEGS],
            min_covariance_eigenvalue: min_eig,
            iterations,
        },
    ))
}
