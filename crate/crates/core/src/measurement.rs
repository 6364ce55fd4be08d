//! Residual measurement model over the leg kinematics.
//!
//! For every leg the foot-to-body relative position and velocity each have
//! two representations: one through forward kinematics from the joint
//! encoders, one as a difference of state variables. The measurement is the
//! stacked residual of the two, with pseudo-measurement target `y ≡ 0`:
//!
//! ```text
//! pos_i = R(q)·fk(φ̃ᵢ; ϱᵢ) - (sᵢ - p)
//! vel_i = R(q)·(J(φ̃ᵢ; ϱᵢ)·φ̇̃ᵢ + [ω̃-b_ω]ₓ·fk(φ̃ᵢ; ϱᵢ)) + v
//! ```
//!
//! Foot slip velocity is omitted from the velocity rows; slip shows up as a
//! residual of exactly that magnitude, which is what the robust state filter
//! treats as an outlier. The gyro term uses the bias-corrected rate, so the
//! velocity rows depend on `b_ω`.
//!
//! Row layout: position residuals for legs FL, FR, RL, RR, then velocity
//! residuals in the same leg order.

use crate::kinematics::{self, LegParams, RobotGeometry};
use crate::types::{
    blocks, skew, MeasCovariance, MeasJacobian, MeasVector, RobotState, SensorFrame, MEAS_DIM,
    NUM_LEGS,
};

/// Default variance inflation applied to the rows of non-contact legs.
pub const DEFAULT_ROW_INFLATION: f64 = 1e6;

/// Row index of leg `i`'s position-residual block.
pub const fn pos_row(leg: usize) -> usize {
    3 * leg
}

/// Row index of leg `i`'s velocity-residual block.
pub const fn vel_row(leg: usize) -> usize {
    3 * NUM_LEGS + 3 * leg
}

/// Evaluates the stacked 6N residual at a state.
pub fn measure(
    x: &RobotState,
    frame: &SensorFrame,
    params: &LegParams,
    geometry: &RobotGeometry,
) -> MeasVector {
    let rot = x.orientation.rotation_matrix();
    let omega = frame.gyro - x.gyro_bias;
    let mut y = MeasVector::zeros();
    for i in 0..NUM_LEGS {
        let geo = &geometry.legs[i];
        let l_c = params.calf_lengths[i];
        let leg = &frame.legs[i];
        let foot_body = kinematics::fk(&leg.joint_angles, geo, l_c);
        let jac = kinematics::jacobian(&leg.joint_angles, geo, l_c);

        let pos = rot * foot_body - (x.foot_positions[i] - x.position);
        let vel = rot * (jac * leg.joint_velocities + omega.cross(&foot_body)) + x.velocity;
        y.fixed_rows_mut::<3>(pos_row(i)).copy_from(&pos);
        y.fixed_rows_mut::<3>(vel_row(i)).copy_from(&vel);
    }
    y
}

/// Analytic tangent-space Jacobian of [`measure`].
pub fn measurement_jacobian(
    x: &RobotState,
    frame: &SensorFrame,
    params: &LegParams,
    geometry: &RobotGeometry,
) -> MeasJacobian {
    let rot = x.orientation.rotation_matrix();
    let omega = frame.gyro - x.gyro_bias;
    let eye = nalgebra::Matrix3::<f64>::identity();
    let mut h = MeasJacobian::zeros();
    for i in 0..NUM_LEGS {
        let geo = &geometry.legs[i];
        let l_c = params.calf_lengths[i];
        let leg = &frame.legs[i];
        let foot_body = kinematics::fk(&leg.joint_angles, geo, l_c);
        let jac = kinematics::jacobian(&leg.joint_angles, geo, l_c);
        let lo_vel = jac * leg.joint_velocities + omega.cross(&foot_body);

        let pr = pos_row(i);
        h.fixed_view_mut::<3, 3>(pr, blocks::DP).copy_from(&eye);
        h.fixed_view_mut::<3, 3>(pr, blocks::foot(i))
            .copy_from(&(-eye));
        h.fixed_view_mut::<3, 3>(pr, blocks::DTHETA)
            .copy_from(&(-rot * skew(&foot_body)));

        let vr = vel_row(i);
        h.fixed_view_mut::<3, 3>(vr, blocks::DV).copy_from(&eye);
        h.fixed_view_mut::<3, 3>(vr, blocks::DTHETA)
            .copy_from(&(-rot * skew(&lo_vel)));
        h.fixed_view_mut::<3, 3>(vr, blocks::DBG)
            .copy_from(&(rot * skew(&foot_body)));
    }
    h
}

/// Jacobian of the residual with respect to the calf lengths, `∂h/∂ϱ`
/// (6N × N). Used to fold parameter uncertainty into the effective
/// measurement covariance: `Σ_eff = Σ + B·P_ϱ·Bᵀ`.
pub fn param_jacobian(
    x: &RobotState,
    frame: &SensorFrame,
    params: &LegParams,
    geometry: &RobotGeometry,
) -> nalgebra::SMatrix<f64, MEAS_DIM, NUM_LEGS> {
    let rot = x.orientation.rotation_matrix();
    let omega = frame.gyro - x.gyro_bias;
    let mut b = nalgebra::SMatrix::<f64, MEAS_DIM, NUM_LEGS>::zeros();
    for i in 0..NUM_LEGS {
        let geo = &geometry.legs[i];
        let l_c = params.calf_lengths[i];
        let leg = &frame.legs[i];
        let fk_l = kinematics::jacobian_wrt_calf(&leg.joint_angles, geo, l_c);
        let dj_l = kinematics::jacobian_calf_derivative(&leg.joint_angles, geo);
        let pos_col = rot * fk_l;
        let vel_col = rot * (dj_l * leg.joint_velocities + omega.cross(&fk_l));
        b.fixed_view_mut::<3, 1>(pos_row(i), i).copy_from(&pos_col);
        b.fixed_view_mut::<3, 1>(vel_row(i), i).copy_from(&vel_col);
    }
    b
}

/// Measurement covariance widened by the parameter belief:
/// `Σ + (∂h/∂ϱ)·P_ϱ·(∂h/∂ϱ)ᵀ`, evaluated at the current state estimate.
pub fn sigma_with_param_uncertainty(
    sigma: &MeasCovariance,
    x: &RobotState,
    frame: &SensorFrame,
    params: &LegParams,
    geometry: &RobotGeometry,
    param_cov: &crate::types::ParamCovariance,
) -> MeasCovariance {
    let b = param_jacobian(x, frame, params, geometry);
    sigma + b * param_cov * b.transpose()
}

/// Per-leg row usability mask: `true` for legs in contact, `false` for legs
/// whose 6 rows should be treated as uninformative this frame.
pub fn leg_row_mask(frame: &SensorFrame) -> [bool; NUM_LEGS] {
    std::array::from_fn(|i| frame.legs[i].contact)
}

/// Inflates the rows/columns of non-contact legs by `factor`, preserving
/// symmetry (`D·Σ·D` with `√factor` on the masked rows).
pub fn inflate_covariance(
    sigma: &MeasCovariance,
    mask: &[bool; NUM_LEGS],
    factor: f64,
) -> MeasCovariance {
    let mut scale = MeasVector::from_element(1.0);
    let sqrt_factor = factor.sqrt();
    for (i, &active) in mask.iter().enumerate() {
        if !active {
            for k in 0..3 {
                scale[pos_row(i) + k] = sqrt_factor;
                scale[vel_row(i) + k] = sqrt_factor;
            }
        }
    }
    let mut out = *sigma;
    for r in 0..out.nrows() {
        for c in 0..out.ncols() {
            out[(r, c)] *= scale[r] * scale[c];
        }
    }
    out
}
