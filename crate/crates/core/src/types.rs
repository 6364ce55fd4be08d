//! Shared mathematical and robot-state types used by every filter module.
//!
//! Conventions fixed here and relied on everywhere else:
//! * Quaternions are Hamilton, scalar-first, and rotate body-frame vectors
//!   into the world frame.
//! * The error (tangent) state is 3N+15 dimensional: orientation contributes
//!   a 3-vector rotation perturbation, applied on the right
//!   (`q <- q ⊗ exp(δθ)`).
//! * Leg order is FL, FR, RL, RR throughout.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of legs on the platform.
pub const NUM_LEGS: usize = 4;
/// Dimension of the tangent-space (error) state: 3N + 15.
pub const TANGENT_DIM: usize = 3 * NUM_LEGS + 15;
/// Dimension of the stacked leg measurement residual: 6N.
pub const MEAS_DIM: usize = 6 * NUM_LEGS;

/// Tangent-space perturbation of a [`RobotState`].
pub type ErrorVector = SVector<f64, TANGENT_DIM>;
/// Covariance over the tangent-space state.
pub type StateCovariance = SMatrix<f64, TANGENT_DIM, TANGENT_DIM>;
/// Stacked per-leg measurement residual vector.
pub type MeasVector = SVector<f64, MEAS_DIM>;
/// Covariance over the stacked measurement residual.
pub type MeasCovariance = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
/// Measurement Jacobian with respect to the tangent state.
pub type MeasJacobian = SMatrix<f64, MEAS_DIM, TANGENT_DIM>;
/// Per-leg parameter vector (calf lengths).
pub type ParamVector = SVector<f64, NUM_LEGS>;
/// Covariance over the leg parameters.
pub type ParamCovariance = SMatrix<f64, NUM_LEGS, NUM_LEGS>;

/// Block offsets into [`ErrorVector`].
pub mod blocks {
    /// Position perturbation offset.
    pub const DP: usize = 0;
    /// Velocity perturbation offset.
    pub const DV: usize = 3;
    /// Orientation (rotation-vector) perturbation offset.
    pub const DTHETA: usize = 6;
    /// First foot-position perturbation offset; leg `i` starts at `DS + 3 * i`.
    pub const DS: usize = 9;
    /// Gyro-bias perturbation offset.
    pub const DBG: usize = 21;
    /// Accelerometer-bias perturbation offset.
    pub const DBA: usize = 24;

    /// Offset of leg `i`'s foot-position block.
    pub const fn foot(i: usize) -> usize {
        DS + 3 * i
    }
}

/// Leg identifiers in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LegId {
    /// Front left.
    FL,
    /// Front right.
    FR,
    /// Rear left.
    RL,
    /// Rear right.
    RR,
}

impl LegId {
    /// All legs in storage order.
    pub const ALL: [LegId; NUM_LEGS] = [LegId::FL, LegId::FR, LegId::RL, LegId::RR];

    /// Storage index of this leg.
    pub const fn index(self) -> usize {
        match self {
            LegId::FL => 0,
            LegId::FR => 1,
            LegId::RL => 2,
            LegId::RR => 3,
        }
    }

    /// Lowercase tag used in CSV headers.
    pub const fn tag(self) -> &'static str {
        match self {
            LegId::FL => "fl",
            LegId::FR => "fr",
            LegId::RL => "rl",
            LegId::RR => "rr",
        }
    }
}

/// Unit quaternion, Hamilton convention, scalar first, body-to-world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    /// Scalar part.
    pub w: f64,
    /// First vector component.
    pub x: f64,
    /// Second vector component.
    pub y: f64,
    /// Third vector component.
    pub z: f64,
}

/// Below this rotation-vector norm `Quat::exp` switches to its Taylor branch.
const EXP_TAYLOR_THRESHOLD: f64 = 1e-8;

impl Quat {
    /// Identity rotation.
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a quaternion from components and normalizes it.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Quat {
        Quat { w, x, y, z }.normalized()
    }

    /// Exponential map from a rotation vector (axis * angle, radians).
    ///
    /// Uses a second-order Taylor expansion of `sin(θ/2)/θ` below 1e-8 to
    /// avoid the 0/0 in the axis normalization.
    pub fn exp(rv: &Vector3<f64>) -> Result<Quat> {
        if !(rv.x.is_finite() && rv.y.is_finite() && rv.z.is_finite()) {
            return Err(Error::InvalidArgument(
                "rotation vector must be finite".into(),
            ));
        }
        Ok(Self::exp_unchecked(rv))
    }

    pub(crate) fn exp_unchecked(rv: &Vector3<f64>) -> Quat {
        let angle = rv.norm();
        let (w, k) = if angle < EXP_TAYLOR_THRESHOLD {
            // cos(θ/2) ≈ 1 - θ²/8, sin(θ/2)/θ ≈ 1/2 - θ²/48
            (1.0 - angle * angle / 8.0, 0.5 - angle * angle / 48.0)
        } else {
            let half = 0.5 * angle;
            (half.cos(), half.sin() / angle)
        };
        Quat {
            w,
            x: k * rv.x,
            y: k * rv.y,
            z: k * rv.z,
        }
        .normalized()
    }

    /// Logarithm map: rotation vector of this quaternion.
    pub fn log(&self) -> Vector3<f64> {
        // Force w >= 0 so the returned angle lies in [0, π].
        let q = if self.w < 0.0 { self.neg() } else { *self };
        let vnorm = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if vnorm < EXP_TAYLOR_THRESHOLD {
            // sin(θ/2) ≈ θ/2 ⇒ rv ≈ 2 v (1 + v²/(6 w²)) / w
            let corr = 2.0 / q.w * (1.0 + vnorm * vnorm / (6.0 * q.w * q.w));
            return Vector3::new(q.x, q.y, q.z) * corr;
        }
        let angle = 2.0 * vnorm.atan2(q.w);
        Vector3::new(q.x, q.y, q.z) * (angle / vnorm)
    }

    /// Hamilton product `self ⊗ rhs`, renormalized.
    pub fn mul(&self, rhs: &Quat) -> Quat {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (rhs.w, rhs.x, rhs.y, rhs.z);
        Quat {
            w: aw * bw - ax * bx - ay * by - az * bz,
            x: aw * bx + ax * bw + ay * bz - az * by,
            y: aw * by - ax * bz + ay * bw + az * bx,
            z: aw * bz + ax * by - ay * bx + az * bw,
        }
        .normalized()
    }

    /// Conjugate (inverse for unit quaternions).
    pub fn conjugate(&self) -> Quat {
        Quat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    fn neg(&self) -> Quat {
        Quat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Body-to-world rotation matrix of this quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Rotates a body-frame vector into the world frame.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * v
    }

    /// Norm of the quaternion as a 4-vector.
    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Returns a unit-norm copy. A quaternion already at unit norm (to a few
    /// ulps) is returned unchanged so that identity operations stay exact.
    pub fn normalized(&self) -> Quat {
        let n2 = self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z;
        if (n2 - 1.0).abs() <= 4.0 * f64::EPSILON {
            return *self;
        }
        let n = n2.sqrt();
        Quat {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }
}

/// Skew-symmetric (cross-product) matrix of a 3-vector.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of the SO(3) exponential map.
///
/// `Exp(θ + δ) ≈ Exp(θ) Exp(J_r(θ) δ)` for small `δ`.
pub fn so3_right_jacobian(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle = theta.norm();
    let tx = skew(theta);
    if angle < 1e-6 {
        return Matrix3::identity() - 0.5 * tx + tx * tx / 6.0;
    }
    let a2 = angle * angle;
    Matrix3::identity() - (1.0 - angle.cos()) / a2 * tx
        + (angle - angle.sin()) / (a2 * angle) * (tx * tx)
}

/// Inverse of the SO(3) right Jacobian.
pub fn so3_right_jacobian_inv(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle = theta.norm();
    let tx = skew(theta);
    if angle < 1e-6 {
        return Matrix3::identity() + 0.5 * tx + tx * tx / 12.0;
    }
    let a2 = angle * angle;
    let cot_term = (1.0 / a2) - (1.0 + angle.cos()) / (2.0 * angle * angle.sin());
    Matrix3::identity() + 0.5 * tx + cot_term * (tx * tx)
}

/// Full estimation state of the robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    /// Body position in the world frame (m).
    pub position: Vector3<f64>,
    /// Body velocity in the world frame (m/s).
    pub velocity: Vector3<f64>,
    /// Body orientation, body-to-world.
    pub orientation: Quat,
    /// Foot contact-point positions in the world frame (m).
    pub foot_positions: [Vector3<f64>; NUM_LEGS],
    /// Gyroscope bias in the body frame (rad/s).
    pub gyro_bias: Vector3<f64>,
    /// Accelerometer bias in the body frame (m/s²).
    pub accel_bias: Vector3<f64>,
}

impl RobotState {
    /// State with everything at zero and identity orientation.
    pub fn zeroed() -> RobotState {
        RobotState {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            orientation: Quat::IDENTITY,
            foot_positions: [Vector3::zeros(); NUM_LEGS],
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
        }
    }

    /// Applies a tangent-space perturbation: additive on the vector blocks,
    /// right-multiplicative on the orientation.
    pub fn retract(&self, delta: &ErrorVector) -> RobotState {
        let dtheta = Vector3::new(
            delta[blocks::DTHETA],
            delta[blocks::DTHETA + 1],
            delta[blocks::DTHETA + 2],
        );
        let mut feet = self.foot_positions;
        for (i, foot) in feet.iter_mut().enumerate() {
            *foot += delta.fixed_rows::<3>(blocks::foot(i)).into_owned();
        }
        RobotState {
            position: self.position + delta.fixed_rows::<3>(blocks::DP).into_owned(),
            velocity: self.velocity + delta.fixed_rows::<3>(blocks::DV).into_owned(),
            orientation: self.orientation.mul(&Quat::exp_unchecked(&dtheta)),
            foot_positions: feet,
            gyro_bias: self.gyro_bias + delta.fixed_rows::<3>(blocks::DBG).into_owned(),
            accel_bias: self.accel_bias + delta.fixed_rows::<3>(blocks::DBA).into_owned(),
        }
    }

    /// Tangent-space coordinates of `other` in the chart centered at `self`;
    /// inverse of [`RobotState::retract`].
    pub fn local(&self, other: &RobotState) -> ErrorVector {
        let mut delta = ErrorVector::zeros();
        delta
            .fixed_rows_mut::<3>(blocks::DP)
            .copy_from(&(other.position - self.position));
        delta
            .fixed_rows_mut::<3>(blocks::DV)
            .copy_from(&(other.velocity - self.velocity));
        let dq = self.orientation.conjugate().mul(&other.orientation);
        delta.fixed_rows_mut::<3>(blocks::DTHETA).copy_from(&dq.log());
        for i in 0..NUM_LEGS {
            delta
                .fixed_rows_mut::<3>(blocks::foot(i))
                .copy_from(&(other.foot_positions[i] - self.foot_positions[i]));
        }
        delta
            .fixed_rows_mut::<3>(blocks::DBG)
            .copy_from(&(other.gyro_bias - self.gyro_bias));
        delta
            .fixed_rows_mut::<3>(blocks::DBA)
            .copy_from(&(other.accel_bias - self.accel_bias));
        delta
    }
}

/// Per-leg sensor readings for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegSensors {
    /// Joint angles [hip-roll, hip-pitch, knee-pitch] (rad).
    pub joint_angles: Vector3<f64>,
    /// Joint angular velocities (rad/s).
    pub joint_velocities: Vector3<f64>,
    /// Joint torques (N·m).
    pub joint_torques: Vector3<f64>,
    /// Measured normal contact force (N).
    pub normal_force: f64,
    /// Contact flag; true iff `normal_force` is at or above the contact
    /// threshold used when the frame was produced.
    pub contact: bool,
}

impl LegSensors {
    /// All-zero, non-contact reading.
    pub fn zeroed() -> LegSensors {
        LegSensors {
            joint_angles: Vector3::zeros(),
            joint_velocities: Vector3::zeros(),
            joint_torques: Vector3::zeros(),
            normal_force: 0.0,
            contact: false,
        }
    }
}

/// One timestamped bundle of proprioceptive sensor readings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    /// Timestamp (s).
    pub time: f64,
    /// Gyroscope reading, body frame (rad/s).
    pub gyro: Vector3<f64>,
    /// Accelerometer reading, body frame (m/s²).
    pub accel: Vector3<f64>,
    /// Per-leg readings in FL, FR, RL, RR order.
    pub legs: [LegSensors; NUM_LEGS],
}

/// Forces exact symmetry: `M <- (M + Mᵀ)/2`.
pub fn symmetrize<const D: usize>(m: &mut SMatrix<f64, D, D>) {
    *m = 0.5 * (*m + m.transpose());
}

/// Symmetrizes and clamps eigenvalues from below. Returns the smallest
/// eigenvalue seen before clamping, for covariance-health diagnostics.
pub fn floor_eigenvalues<const D: usize>(m: &mut SMatrix<f64, D, D>, floor: f64) -> f64 {
    symmetrize(m);
    // Statically sized eigendecomposition needs typenum plumbing; go dynamic.
    let dm = nalgebra::DMatrix::from_iterator(D, D, m.iter().copied());
    let eig = dm.symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig >= floor {
        return min_eig;
    }
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        if *v < floor {
            *v = floor;
        }
    }
    let fixed = &eig.eigenvectors
        * nalgebra::DMatrix::from_diagonal(&vals)
        * eig.eigenvectors.transpose();
    for r in 0..D {
        for c in 0..D {
            m[(r, c)] = fixed[(r, c)];
        }
    }
    symmetrize(m);
    min_eig
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<const D: usize>(m: &SMatrix<f64, D, D>) -> f64 {
    nalgebra::DMatrix::from_iterator(D, D, m.iter().copied())
        .symmetric_eigen()
        .eigenvalues
        .min()
}

/// Checks that a matrix is symmetric (1e-12) and positive definite.
pub fn check_spd<const D: usize>(m: &SMatrix<f64, D, D>, name: &str) -> Result<()> {
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "{name} is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let min_eig = min_eigenvalue(m);
    if min_eig <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{name} is not positive definite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

/// Noise configuration for the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Per-step process covariance over the tangent state. The foot blocks
    /// are interpreted in the body frame and rotated to world at
    /// linearization time.
    pub process: StateCovariance,
    /// Measurement covariance over the stacked 6N residual.
    pub measurement: MeasCovariance,
    /// Per-step parameter random-walk covariance.
    pub param_walk: ParamCovariance,
    /// Statics (normal-force) measurement covariance, per leg.
    pub statics_meas: ParamCovariance,
    /// Robustness parameter of the divergence-based state filter, in (0, 1).
    pub beta: f64,
    /// Gravity vector in the world frame (m/s²).
    pub gravity: Vector3<f64>,
}

/// Scalar standard deviations from which [`NoiseConfig`] matrices are built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseStds {
    /// Position process noise per step (m).
    pub process_position: f64,
    /// Velocity process noise per step (m/s).
    pub process_velocity: f64,
    /// Orientation process noise per step (rad).
    pub process_orientation: f64,
    /// Foot random-walk noise per step (m), body frame.
    pub process_foot: f64,
    /// Gyro-bias walk per step (rad/s).
    pub process_gyro_bias: f64,
    /// Accel-bias walk per step (m/s²).
    pub process_accel_bias: f64,
    /// Position-residual measurement noise (m).
    pub meas_position: f64,
    /// Velocity-residual measurement noise (m/s).
    pub meas_velocity: f64,
    /// Parameter random-walk noise per step (m).
    pub param_walk: f64,
    /// Statics normal-force measurement noise (N).
    pub statics_force: f64,
}

impl Default for NoiseStds {
    fn default() -> Self {
        NoiseStds {
            process_position: 1e-5,
            process_velocity: 4e-4,
            process_orientation: 2e-5,
            process_foot: 1e-4,
            process_gyro_bias: 1e-7,
            process_accel_bias: 1e-6,
            meas_position: 3e-3,
            meas_velocity: 5e-3,
            param_walk: 5e-4,
            statics_force: 3.0,
        }
    }
}

/// Standard gravity used across the crate (m/s²).
pub const GRAVITY: f64 = 9.81;

impl NoiseConfig {
    /// Builds diagonal covariance blocks from scalar standard deviations.
    pub fn from_stds(stds: &NoiseStds, beta: f64) -> NoiseConfig {
        let mut q = StateCovariance::zeros();
        let put = |q: &mut StateCovariance, offset: usize, sigma: f64| {
            for k in 0..3 {
                q[(offset + k, offset + k)] = sigma * sigma;
            }
        };
        put(&mut q, blocks::DP, stds.process_position);
        put(&mut q, blocks::DV, stds.process_velocity);
        put(&mut q, blocks::DTHETA, stds.process_orientation);
        for i in 0..NUM_LEGS {
            put(&mut q, blocks::foot(i), stds.process_foot);
        }
        put(&mut q, blocks::DBG, stds.process_gyro_bias);
        put(&mut q, blocks::DBA, stds.process_accel_bias);

        let mut sigma = MeasCovariance::zeros();
        for i in 0..NUM_LEGS {
            for k in 0..3 {
                sigma[(3 * i + k, 3 * i + k)] = stds.meas_position * stds.meas_position;
                let row = 3 * NUM_LEGS + 3 * i + k;
                sigma[(row, row)] = stds.meas_velocity * stds.meas_velocity;
            }
        }

        NoiseConfig {
            process: q,
            measurement: sigma,
            param_walk: ParamCovariance::identity() * stds.param_walk * stds.param_walk,
            statics_meas: ParamCovariance::identity() * stds.statics_force * stds.statics_force,
            beta,
            gravity: Vector3::new(0.0, 0.0, -GRAVITY),
        }
    }

    /// Validates the SPD and β-range invariants.
    pub fn validate(&self) -> Result<()> {
        check_spd(&self.process, "process covariance")?;
        check_spd(&self.measurement, "measurement covariance")?;
        check_spd(&self.param_walk, "parameter-walk covariance")?;
        check_spd(&self.statics_meas, "statics measurement covariance")?;
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::from_stds(&NoiseStds::default(), 1e-3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Rodrigues' rotation formula, built independently of `Quat`.
    fn rodrigues(rv: &Vector3<f64>) -> Matrix3<f64> {
        let angle = rv.norm();
        if angle == 0.0 {
            return Matrix3::identity();
        }
        let k = skew(&(rv / angle));
        Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * (k * k)
    }

    fn random_quat(seed: u64) -> Quat {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let rv = Vector3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        );
        Quat::exp(&rv).unwrap()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let q = Quat::exp(&Vector3::zeros()).unwrap();
        assert_eq!(q, Quat::IDENTITY);
    }

    #[test]
    fn exp_of_half_turn_about_x() {
        let q = Quat::exp(&Vector3::new(std::f64::consts::PI, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(q.w, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.z, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn exp_matches_rodrigues() {
        let rv = Vector3::new(0.1, -0.2, 0.3);
        let r_quat = Quat::exp(&rv).unwrap().rotation_matrix();
        let r_rod = rodrigues(&rv);
        assert!((r_quat - r_rod).abs().max() < 1e-12);
    }

    #[test]
    fn exp_rejects_non_finite() {
        assert!(Quat::exp(&Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(Quat::exp(&Vector3::new(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn exp_taylor_branch_consistency() {
        // Both branches evaluated explicitly at norms spanning the switch.
        for &norm in &[1e-12f64, 1e-9, 1e-6] {
            let rv = Vector3::new(norm, 0.0, 0.0);
            let angle: f64 = rv.norm();
            let taylor = Quat {
                w: 1.0 - angle * angle / 8.0,
                x: (0.5 - angle * angle / 48.0) * rv.x,
                y: 0.0,
                z: 0.0,
            };
            let exact = Quat {
                w: (0.5 * angle).cos(),
                x: (0.5 * angle).sin() / angle * rv.x,
                y: 0.0,
                z: 0.0,
            };
            assert!((taylor.w - exact.w).abs() < 1e-14);
            assert!((taylor.x - exact.x).abs() < 1e-14);
        }
    }

    #[test]
    fn mul_identity_and_inverse() {
        let q = random_quat(7);
        assert_eq!(q.mul(&Quat::IDENTITY), q);
        let qinv = q.mul(&q.conjugate());
        assert_abs_diff_eq!(qinv.w, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(qinv.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(qinv.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(qinv.z, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mul_half_turns_compose() {
        let qx = Quat::new(0.0, 1.0, 0.0, 0.0);
        let qy = Quat::new(0.0, 0.0, 1.0, 0.0);
        let qz = qx.mul(&qy);
        // x-half-turn then y-half-turn equals z-half-turn up to sign; check
        // through the rotation-matrix product oracle.
        let expected = qx.rotation_matrix() * qy.rotation_matrix();
        assert!((qz.rotation_matrix() - expected).abs().max() < 1e-15);
        assert_abs_diff_eq!(qz.z.abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rotation_matrix_identity_and_half_turn() {
        assert_eq!(Quat::IDENTITY.rotation_matrix(), Matrix3::identity());
        let qz = Quat::new(0.0, 0.0, 0.0, 1.0);
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert!((qz.rotation_matrix() - expected).abs().max() < 1e-15);
    }

    #[test]
    fn rotation_matrix_is_orthogonal() {
        for seed in 0..50 {
            let r = random_quat(seed).rotation_matrix();
            assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-12);
            assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mul_is_rotation_composition() {
        for seed in 0..50 {
            let a = random_quat(seed);
            let b = random_quat(seed + 1000);
            let lhs = a.mul(&b).rotation_matrix();
            let rhs = a.rotation_matrix() * b.rotation_matrix();
            assert!((lhs - rhs).abs().max() < 1e-12);
        }
    }

    #[test]
    fn retract_zero_is_exact() {
        let mut x = RobotState::zeroed();
        x.position = Vector3::new(1.0, -2.0, 0.3);
        x.velocity = Vector3::new(0.1, 0.0, -0.7);
        x.orientation = random_quat(3);
        x.foot_positions[2] = Vector3::new(0.5, 0.5, 0.0);
        x.gyro_bias = Vector3::new(1e-3, -2e-3, 0.0);
        let y = x.retract(&ErrorVector::zeros());
        assert_eq!(x, y);
    }

    #[test]
    fn retract_shifts_position_only() {
        let x = RobotState::zeroed();
        let mut delta = ErrorVector::zeros();
        delta[blocks::DP] = 1.0;
        let y = x.retract(&delta);
        assert_eq!(y.position, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(y.orientation, x.orientation);
        assert_eq!(y.velocity, x.velocity);
    }

    #[test]
    fn quat_log_exp_roundtrip() {
        for seed in 0..20 {
            let q = random_quat(seed);
            let rv = q.log();
            let q2 = Quat::exp(&rv).unwrap();
            assert!((q.rotation_matrix() - q2.rotation_matrix()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn right_jacobian_inverse_consistency() {
        for seed in 0..20 {
            let q = random_quat(seed);
            let theta = q.log() * 0.3;
            let j = so3_right_jacobian(&theta);
            let jinv = so3_right_jacobian_inv(&theta);
            assert!((j * jinv - Matrix3::identity()).abs().max() < 1e-10);
        }
    }

    #[test]
    fn symmetrize_is_idempotent() {
        let mut m = SMatrix::<f64, 4, 4>::from_fn(|r, c| ((r * 5 + c * 3) % 7) as f64 - 3.0);
        symmetrize(&mut m);
        let once = m;
        symmetrize(&mut m);
        assert_eq!(once, m);
    }

    #[test]
    fn eigenvalue_floor_reports_and_fixes() {
        let mut m = SMatrix::<f64, 3, 3>::from_diagonal(&Vector3::new(1.0, 2.0, -0.5));
        let min_eig = floor_eigenvalues(&mut m, 1e-12);
        assert_abs_diff_eq!(min_eig, -0.5, epsilon = 1e-12);
        assert!(m.symmetric_eigen().eigenvalues.min() >= 1e-13);
    }

    #[test]
    fn noise_config_default_is_valid() {
        NoiseConfig::default().validate().unwrap();
    }

    #[test]
    fn noise_config_rejects_bad_beta() {
        let mut cfg = NoiseConfig::default();
        cfg.beta = 1.5;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn retract_local_roundtrip(
            dp in proptest::array::uniform3(-1.0f64..1.0),
            dv in proptest::array::uniform3(-1.0f64..1.0),
            dth in proptest::array::uniform3(-0.05f64..0.05),
            dbg_ in proptest::array::uniform3(-0.01f64..0.01),
            seed in 0u64..64,
        ) {
            let mut x = RobotState::zeroed();
            x.orientation = random_quat(seed);
            x.position = Vector3::new(0.3, -0.2, 1.0);
            let mut delta = ErrorVector::zeros();
            for k in 0..3 {
                delta[blocks::DP + k] = dp[k];
                delta[blocks::DV + k] = dv[k];
                delta[blocks::DTHETA + k] = dth[k];
                delta[blocks::DBG + k] = dbg_[k];
            }
            let recovered = x.local(&x.retract(&delta));
            prop_assert!((recovered - delta).amax() < 1e-10);
        }
    }
}
