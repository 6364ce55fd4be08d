//! Per-leg forward kinematics, analytic Jacobians, and leg statics.
//!
//! The canonical chain for each 3-DoF leg is: hip-roll about the body x
//! axis, then hip-pitch and knee-pitch about the (rolled) y axis, with a
//! lateral hip offset between the roll and pitch joints:
//!
//! ```text
//! foot = hip + Rx(φ₁)·[0, σ·d, 0]
//!            + Rx(φ₁)·Ry(φ₂)·[0, 0, -l_t]
//!            + Rx(φ₁)·Ry(φ₂+φ₃)·[0, 0, -l_c]
//! ```
//!
//! where `σ` is +1 for left legs and -1 for right legs. All positions are in
//! the body frame, relative to the body center.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LegId, NUM_LEGS};

/// Fixed geometry of one leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegGeometry {
    /// Which leg this is.
    pub leg: LegId,
    /// Hip (roll-joint) position relative to the body center (m, body frame).
    pub hip_position: Vector3<f64>,
    /// Magnitude of the lateral hip offset between roll and pitch joints (m).
    pub hip_offset: f64,
    /// Thigh length (m).
    pub thigh_length: f64,
    /// +1.0 for left legs, -1.0 for right legs.
    pub side_sign: f64,
}

impl LegGeometry {
    /// Signed lateral offset applied along the rolled y axis.
    pub fn signed_offset(&self) -> f64 {
        self.side_sign * self.hip_offset
    }
}

/// Default hip x offset from the body center (m).
pub const DEFAULT_HIP_X: f64 = 0.1934;
/// Default hip y offset from the body center (m).
pub const DEFAULT_HIP_Y: f64 = 0.0465;
/// Default lateral hip offset (m).
pub const DEFAULT_HIP_OFFSET: f64 = 0.0955;
/// Default thigh length (m).
pub const DEFAULT_THIGH_LENGTH: f64 = 0.213;
/// Nominal calf length (m).
pub const NOMINAL_CALF_LENGTH: f64 = 0.226;

/// Condition-number threshold above which a leg Jacobian is treated as
/// singular and not inverted.
pub const SINGULARITY_CONDITION_LIMIT: f64 = 1e8;

/// Geometry of all four legs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotGeometry {
    /// Per-leg fixed geometry in FL, FR, RL, RR order.
    pub legs: [LegGeometry; NUM_LEGS],
    /// Body mass (kg); used by the simulator's quasi-static force model.
    pub body_mass: f64,
}

impl Default for RobotGeometry {
    fn default() -> Self {
        let leg = |leg: LegId, sx: f64, sy: f64| LegGeometry {
            leg,
            hip_position: Vector3::new(sx * DEFAULT_HIP_X, sy * DEFAULT_HIP_Y, 0.0),
            hip_offset: DEFAULT_HIP_OFFSET,
            thigh_length: DEFAULT_THIGH_LENGTH,
            side_sign: sy,
        };
        RobotGeometry {
            legs: [
                leg(LegId::FL, 1.0, 1.0),
                leg(LegId::FR, 1.0, -1.0),
                leg(LegId::RL, -1.0, 1.0),
                leg(LegId::RR, -1.0, -1.0),
            ],
            body_mass: 15.0,
        }
    }
}

/// Per-leg calf lengths, the online-estimated parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegParams {
    /// Calf length per leg (m), FL, FR, RL, RR order.
    pub calf_lengths: [f64; NUM_LEGS],
}

impl LegParams {
    /// All legs at the same calf length.
    pub fn uniform(l_c: f64) -> LegParams {
        LegParams {
            calf_lengths: [l_c; NUM_LEGS],
        }
    }

    /// Nominal factory calf length on every leg.
    pub fn nominal() -> LegParams {
        LegParams::uniform(NOMINAL_CALF_LENGTH)
    }

    /// Sanity-checks 0 < l_c < `max_length` on every leg.
    pub fn validate(&self, max_length: f64) -> Result<()> {
        for (i, &l) in self.calf_lengths.iter().enumerate() {
            if !(l > 0.0 && l < max_length) {
                return Err(Error::InvalidArgument(format!(
                    "calf length {l} of leg {i} outside (0, {max_length})"
                )));
            }
        }
        Ok(())
    }
}

impl Default for LegParams {
    fn default() -> Self {
        LegParams::nominal()
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Foot position relative to the body center, body frame (m).
pub fn fk(phi: &Vector3<f64>, geo: &LegGeometry, l_c: f64) -> Vector3<f64> {
    let (s2, c2) = phi.y.sin_cos();
    let (s23, c23) = (phi.y + phi.z).sin_cos();
    // Chain expressed in the rolled frame, then rolled about x.
    let in_rolled = Vector3::new(
        -geo.thigh_length * s2 - l_c * s23,
        geo.signed_offset(),
        -geo.thigh_length * c2 - l_c * c23,
    );
    geo.hip_position + rot_x(phi.x) * in_rolled
}

/// Analytic Jacobian `∂fk/∂φ` (3×3, m/rad).
pub fn jacobian(phi: &Vector3<f64>, geo: &LegGeometry, l_c: f64) -> Matrix3<f64> {
    let (s2, c2) = phi.y.sin_cos();
    let (s23, c23) = (phi.y + phi.z).sin_cos();
    let rx = rot_x(phi.x);
    // Roll column: rotation of the whole chain about body x.
    let arm = fk(phi, geo, l_c) - geo.hip_position;
    let col1 = Vector3::new(0.0, -arm.z, arm.y);
    let col2 = rx * Vector3::new(
        -geo.thigh_length * c2 - l_c * c23,
        0.0,
        geo.thigh_length * s2 + l_c * s23,
    );
    let col3 = rx * Vector3::new(-l_c * c23, 0.0, l_c * s23);
    Matrix3::from_columns(&[col1, col2, col3])
}

/// Analytic derivative `∂fk/∂l_c` (unit direction of the calf axis).
pub fn jacobian_wrt_calf(phi: &Vector3<f64>, _geo: &LegGeometry, _l_c: f64) -> Vector3<f64> {
    let (s23, c23) = (phi.y + phi.z).sin_cos();
    rot_x(phi.x) * Vector3::new(-s23, 0.0, -c23)
}

/// Derivative of the joint Jacobian with respect to the calf length,
/// `∂J/∂l_c` (3×3, 1/rad).
pub fn jacobian_calf_derivative(phi: &Vector3<f64>, geo: &LegGeometry) -> Matrix3<f64> {
    let (s23, c23) = (phi.y + phi.z).sin_cos();
    let rx = rot_x(phi.x);
    let calf_axis = jacobian_wrt_calf(phi, geo, 0.0);
    // Columns: roll column is e_x × ∂fk/∂l_c; both pitch columns share the
    // calf-direction derivative.
    let col1 = Vector3::new(0.0, -calf_axis.z, calf_axis.y);
    let col23 = rx * Vector3::new(-c23, 0.0, s23);
    Matrix3::from_columns(&[col1, col23, col23])
}

/// Condition number (2-norm) of a leg Jacobian.
pub fn condition_number(j: &Matrix3<f64>) -> f64 {
    let sv = j.svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Joint torques balancing a ground-reaction force: `τ = -Jᵀ F`.
///
/// `force` is the GRF acting on the foot, expressed in the body frame.
pub fn statics_torque(
    phi: &Vector3<f64>,
    geo: &LegGeometry,
    l_c: f64,
    force: &Vector3<f64>,
) -> Vector3<f64> {
    -jacobian(phi, geo, l_c).transpose() * force
}

/// Ground-reaction force recovered from joint torques: `F = -J⁻ᵀ τ`.
pub fn statics_force(
    phi: &Vector3<f64>,
    geo: &LegGeometry,
    l_c: f64,
    torque: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let j = jacobian(phi, geo, l_c);
    if condition_number(&j) > SINGULARITY_CONDITION_LIMIT {
        return Err(Error::SingularConfiguration(format!(
            "leg Jacobian condition number exceeds {SINGULARITY_CONDITION_LIMIT:.0e} at φ = [{}, {}, {}]",
            phi.x, phi.y, phi.z
        )));
    }
    j.transpose()
        .lu()
        .solve(&(-torque))
        .ok_or_else(|| Error::numerical("leg Jacobian transpose not invertible"))
}

/// Predicted normal (z) contact force from joint torques; the third
/// component of `-J⁻ᵀ τ`.
pub fn statics_normal_force(
    phi: &Vector3<f64>,
    geo: &LegGeometry,
    l_c: f64,
    torque: &Vector3<f64>,
) -> Result<f64> {
    Ok(statics_force(phi, geo, l_c, torque)?.z)
}

/// Joint angles realizing a body-frame foot position, inverse of [`fk`].
///
/// Picks the knee-backward branch (`φ₃ ≤ 0`) used by the standing pose.
pub fn inverse_kinematics(
    foot_body: &Vector3<f64>,
    geo: &LegGeometry,
    l_c: f64,
) -> Result<Vector3<f64>> {
    let w = foot_body - geo.hip_position;
    let d = geo.signed_offset();
    let r2 = w.y * w.y + w.z * w.z;
    let r = r2.sqrt();
    if r < d.abs() {
        return Err(Error::InvalidArgument(format!(
            "foot target inside the hip-offset cylinder (r = {r:.4} < |d| = {:.4})",
            d.abs()
        )));
    }
    let phi1 = w.z.atan2(w.y) + (d / r).clamp(-1.0, 1.0).acos();

    // Planar 2-link problem in the rolled x-z plane.
    let u = rot_x(-phi1) * w - Vector3::new(0.0, d, 0.0);
    let lt = geo.thigh_length;
    let dist2 = u.x * u.x + u.z * u.z;
    let dist = dist2.sqrt();
    if dist > lt + l_c || dist < (lt - l_c).abs() {
        return Err(Error::InvalidArgument(format!(
            "foot target out of reach (distance {dist:.4}, limb range [{:.4}, {:.4}])",
            (lt - l_c).abs(),
            lt + l_c
        )));
    }
    let cos_gamma = ((lt * lt + l_c * l_c - dist2) / (2.0 * lt * l_c)).clamp(-1.0, 1.0);
    let gamma = cos_gamma.acos();
    let phi3 = -(std::f64::consts::PI - gamma);
    let theta_u = (-u.x).atan2(-u.z);
    let phi2 = theta_u - (l_c * phi3.sin()).atan2(lt + l_c * phi3.cos());
    Ok(Vector3::new(phi1, phi2, phi3))
}
