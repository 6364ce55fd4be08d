//! Shared fixtures for the integration tests.

use nalgebra::Vector3;
use proprio::kinematics::{self, LegParams, RobotGeometry};
use proprio::process::{propagate, ControlInput};
use proprio::sim::Dataset;
use proprio::types::{LegSensors, RobotState, SensorFrame, GRAVITY, NUM_LEGS};

/// A sensor stream that is exactly consistent with the discrete propagation
/// and measurement models: feet planted, encoders from IK at the true state,
/// joint rates solving the no-slip velocity relation, torques from statics.
pub struct ConsistentStream {
    pub dataset: Dataset,
    pub truth: Vec<RobotState>,
    pub params: LegParams,
    pub geometry: RobotGeometry,
}

/// Gravity vector used by the fixtures.
pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

/// Builds `frames` frames at step `dt` of gently wiggling body motion with
/// all four feet planted. `propagate` reproduces the truth exactly and the
/// measurement residual at the truth is zero to floating precision.
pub fn discrete_consistent_stream(frames: usize, dt: f64) -> ConsistentStream {
    let geometry = RobotGeometry::default();
    let params = LegParams::nominal();
    let g = gravity();

    // Acceleration is the second derivative of a bounded sinusoidal
    // position profile, so the body wiggles around the stance instead of
    // drifting away from the planted feet.
    let wx = 2.0 * std::f64::consts::PI * 0.5;
    let wy = 2.0 * std::f64::consts::PI * 0.3;
    let wz = 2.0 * std::f64::consts::PI * 0.7;
    let (ax_amp, ay_amp, az_amp) = (0.03, 0.025, 0.004);

    let mut x = RobotState::zeroed();
    x.position = Vector3::new(0.0, 0.0, 0.30);
    x.velocity = Vector3::new(ax_amp * wx, ay_amp * wy, az_amp * wz);
    for i in 0..NUM_LEGS {
        let geo = &geometry.legs[i];
        let shoulder = geo.hip_position + Vector3::new(0.0, geo.signed_offset(), 0.0);
        x.foot_positions[i] = Vector3::new(
            x.position.x + shoulder.x,
            x.position.y + shoulder.y,
            0.0,
        );
    }

    let mut dataset = Dataset::default();
    let mut truth = Vec::with_capacity(frames);
    let weight_share = geometry.body_mass * GRAVITY / NUM_LEGS as f64;

    for k in 0..frames {
        let t = k as f64 * dt;
        // World acceleration from the bounded position profile; body rates
        // with bounded integrals.
        let accel_world = Vector3::new(
            -ax_amp * wx * wx * (wx * t).sin(),
            -ay_amp * wy * wy * (wy * t).sin(),
            -az_amp * wz * wz * (wz * t).sin(),
        );
        let omega = Vector3::new(
            0.05 * (2.0 * std::f64::consts::PI * 0.4 * t).cos(),
            0.05 * (2.0 * std::f64::consts::PI * 0.6 * t + 0.3).cos(),
            0.25 * (2.0 * std::f64::consts::PI * 0.2 * t).cos(),
        );
        let rot = x.orientation.rotation_matrix();

        let mut legs = [LegSensors::zeroed(); NUM_LEGS];
        for i in 0..NUM_LEGS {
            let geo = &geometry.legs[i];
            let foot_body = rot.transpose() * (x.foot_positions[i] - x.position);
            let phi = kinematics::inverse_kinematics(&foot_body, geo, params.calf_lengths[i])
                .expect("fixture foot within reach");
            let jac = kinematics::jacobian(&phi, geo, params.calf_lengths[i]);
            // Zero velocity residual: J φ̇ = -[ω]× f_body - Rᵀ v.
            let rhs = -omega.cross(&foot_body) - rot.transpose() * x.velocity;
            let phidot = jac.lu().solve(&rhs).expect("fixture Jacobian invertible");
            let force_body = rot.transpose() * Vector3::new(0.0, 0.0, weight_share);
            legs[i] = LegSensors {
                joint_angles: phi,
                joint_velocities: phidot,
                joint_torques: kinematics::statics_torque(
                    &phi,
                    geo,
                    params.calf_lengths[i],
                    &force_body,
                ),
                normal_force: force_body.z,
                contact: true,
            };
        }

        let frame = SensorFrame {
            time: t,
            gyro: omega,
            accel: rot.transpose() * (accel_world - g),
            legs,
        };
        dataset.frames.push(frame);
        truth.push(x);

        // Advance the truth with the exact discrete model.
        let u = ControlInput {
            accel: frame.accel,
            gyro: frame.gyro,
            dt,
        };
        x = propagate(&x, &u, &g).expect("fixture propagation");
    }

    ConsistentStream {
        dataset,
        truth,
        params,
        geometry,
    }
}
