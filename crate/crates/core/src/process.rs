//! Discrete state propagation driven by IMU samples, and its tangent-space
//! Jacobian.
//!
//! Euler discretization at the IMU rate:
//!
//! ```text
//! p⁺ = p + v·δt
//! v⁺ = v + (R(q)(ã - b_a) + g)·δt
//! q⁺ = q ⊗ Φ((ω̃ - b_ω)·δt)
//! s⁺ = s,  b⁺ = b
//! ```

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::types::{
    blocks, skew, so3_right_jacobian, Quat, RobotState, StateCovariance, NUM_LEGS,
};

/// One IMU sample treated as the control input for a propagation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    /// Accelerometer reading (m/s², body frame).
    pub accel: Vector3<f64>,
    /// Gyroscope reading (rad/s, body frame).
    pub gyro: Vector3<f64>,
    /// Step length (s).
    pub dt: f64,
}

impl ControlInput {
    /// Validates finiteness and the step-length sanity bound.
    pub fn validate(&self) -> Result<()> {
        if !(self.accel.iter().all(|a| a.is_finite()) && self.gyro.iter().all(|w| w.is_finite())) {
            return Err(Error::InvalidArgument("non-finite IMU sample".into()));
        }
        if !(self.dt > 0.0 && self.dt < 0.1) {
            return Err(Error::InvalidArgument(format!(
                "step length {} outside (0, 0.1) s",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Propagates the state one step forward.
pub fn propagate(x: &RobotState, u: &ControlInput, gravity: &Vector3<f64>) -> Result<RobotState> {
    u.validate()?;
    let rot = x.orientation.rotation_matrix();
    let accel_world = rot * (u.accel - x.accel_bias) + gravity;
    let next = RobotState {
        position: x.position + x.velocity * u.dt,
        velocity: x.velocity + accel_world * u.dt,
        orientation: x
            .orientation
            .mul(&Quat::exp_unchecked(&((u.gyro - x.gyro_bias) * u.dt))),
        foot_positions: x.foot_positions,
        gyro_bias: x.gyro_bias,
        accel_bias: x.accel_bias,
    };
    let finite = next.position.iter().all(|v| v.is_finite())
        && next.velocity.iter().all(|v| v.is_finite())
        && next.orientation.norm().is_finite();
    if !finite {
        return Err(Error::numerical("propagation produced non-finite state"));
    }
    Ok(next)
}

/// Tangent-space Jacobian of [`propagate`] with respect to the state.
///
/// Orientation blocks use the exact group expressions
/// (`R(Φ(ωδt))ᵀ` and `-δt·J_r(ωδt)`), which reduce to the familiar
/// first-order forms `I - [ωδt]ₓ` and `-δt·I` at small steps.
pub fn process_jacobian(x: &RobotState, u: &ControlInput, _gravity: &Vector3<f64>) -> StateCovariance {
    let dt = u.dt;
    let rot = x.orientation.rotation_matrix();
    let omega_dt = (u.gyro - x.gyro_bias) * dt;

    let mut f = StateCovariance::identity();
    // δp ← δp + δt δv
    f.fixed_view_mut::<3, 3>(blocks::DP, blocks::DV)
        .copy_from(&(nalgebra::Matrix3::identity() * dt));
    // δv ← δv - δt R [ã - b_a]ₓ δθ - δt R δb_a
    let accel_body = u.accel - x.accel_bias;
    f.fixed_view_mut::<3, 3>(blocks::DV, blocks::DTHETA)
        .copy_from(&(-(rot * skew(&accel_body)) * dt));
    f.fixed_view_mut::<3, 3>(blocks::DV, blocks::DBA)
        .copy_from(&(-rot * dt));
    // δθ ← R(Φ(ωδt))ᵀ δθ - δt J_r(ωδt) δb_ω
    let dq_rot = Quat::exp_unchecked(&omega_dt).rotation_matrix();
    f.fixed_view_mut::<3, 3>(blocks::DTHETA, blocks::DTHETA)
        .copy_from(&dq_rot.transpose());
    f.fixed_view_mut::<3, 3>(blocks::DTHETA, blocks::DBG)
        .copy_from(&(-dt * so3_right_jacobian(&omega_dt)));
    // Foot and bias blocks stay identity.
    f
}

/// Process covariance with the foot blocks rotated from the body frame to
/// the world frame at the current orientation.
pub fn process_noise_world(q: &Quat, process: &StateCovariance) -> StateCovariance {
    process_noise_for_contacts(q, process, &[true; NUM_LEGS], 1.0)
}

/// [`process_noise_world`] with swing-leg foot blocks additionally scaled by
/// `foot_inflation`.
///
/// The foot random walk only models feet on the ground; a swing foot carries
/// no information until touchdown, so its process noise must be large enough
/// that the filter re-localizes the foot from the first stance measurements.
pub fn process_noise_for_contacts(
    q: &Quat,
    process: &StateCovariance,
    contact: &[bool; NUM_LEGS],
    foot_inflation: f64,
) -> StateCovariance {
    let rot = q.rotation_matrix();
    let mut out = *process;
    for i in 0..NUM_LEGS {
        let off = blocks::foot(i);
        let scale = if contact[i] { 1.0 } else { foot_inflation };
        let block = process.fixed_view::<3, 3>(off, off).into_owned() * scale;
        out.fixed_view_mut::<3, 3>(off, off)
            .copy_from(&(rot * block * rot.transpose()));
    }
    out
}
