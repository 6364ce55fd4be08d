//! Deterministic synthetic trot-gait data generator.
//!
//! Produces a ground-truth trajectory plus the proprioceptive sensor stream
//! a robot walking that trajectory would record. The generator realizes
//! exactly the models the estimators assume — leg kinematics for encoders,
//! quasi-static torque balance for torques and contact forces — plus two
//! controlled violations: injectable foot slippage (the measurement outlier)
//! and time-varying calf lengths (the parameter drift).
//!
//! Body motion is a twist profile (body-frame velocity and yaw rate per
//! segment, C¹-blended at boundaries) integrated with RK4 at sub-frame
//! steps, so the sampled trajectory satisfies the continuous motion
//! equations to well below discretization order.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{self, RobotGeometry};
use crate::types::{LegSensors, Quat, RobotState, SensorFrame, GRAVITY, NUM_LEGS};

/// One piece of the body speed profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistSegment {
    /// Segment duration (s).
    pub duration_s: f64,
    /// Body-frame velocity (m/s); z is ignored (flat ground).
    pub velocity: [f64; 3],
    /// Yaw rate (rad/s).
    pub yaw_rate: f64,
}

/// Gait selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaitType {
    /// All four legs on the ground, no stepping.
    Stand,
    /// Diagonal pairs alternate stance and swing.
    Trot,
}

/// True calf-length trajectory of one leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum CalfTrajectory {
    /// Fixed length (m).
    Constant(f64),
    /// `mean + amplitude·sin(2π·frequency·t + phase)`.
    Sinusoid {
        /// Center length (m).
        mean: f64,
        /// Oscillation amplitude (m).
        amplitude: f64,
        /// Oscillation frequency (Hz).
        frequency_hz: f64,
        /// Phase offset (rad).
        phase: f64,
    },
    /// Linear ramp between two lengths over a time window, constant outside.
    Ramp {
        /// Initial length (m).
        from: f64,
        /// Final length (m).
        to: f64,
        /// Ramp start time (s).
        start_s: f64,
        /// Ramp end time (s).
        end_s: f64,
    },
}

impl CalfTrajectory {
    /// Length at time `t`.
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            CalfTrajectory::Constant(l) => l,
            CalfTrajectory::Sinusoid {
                mean,
                amplitude,
                frequency_hz,
                phase,
            } => mean + amplitude * (2.0 * std::f64::consts::PI * frequency_hz * t + phase).sin(),
            CalfTrajectory::Ramp {
                from,
                to,
                start_s,
                end_s,
            } => {
                let u = ((t - start_s) / (end_s - start_s)).clamp(0.0, 1.0);
                from + u * (to - from)
            }
        }
    }
}

/// Sensor noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorNoise {
    /// Gyroscope (rad/s).
    pub gyro: f64,
    /// Accelerometer (m/s²).
    pub accel: f64,
    /// Joint encoder angle (rad).
    pub joint_angle: f64,
    /// Joint encoder rate (rad/s).
    pub joint_rate: f64,
    /// Joint torque (N·m).
    pub torque: f64,
    /// Contact force (N).
    pub contact_force: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        SensorNoise {
            gyro: 0.01,
            accel: 0.1,
            joint_angle: 1e-3,
            joint_rate: 0.01,
            torque: 0.2,
            contact_force: 2.0,
        }
    }
}

impl SensorNoise {
    /// All-zero noise, for consistency fixtures.
    pub fn zero() -> SensorNoise {
        SensorNoise {
            gyro: 0.0,
            accel: 0.0,
            joint_angle: 0.0,
            joint_rate: 0.0,
            torque: 0.0,
            contact_force: 0.0,
        }
    }
}

/// Foot-slip event statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlipModel {
    /// Marginal probability that a stance leg-frame is slipping.
    pub probability: f64,
    /// Mean slip-episode length in frames (geometric distribution).
    pub mean_duration_frames: f64,
    /// Slip speed range (m/s), sampled uniformly.
    pub speed_min: f64,
    /// Upper end of the slip speed range (m/s).
    pub speed_max: f64,
}

impl SlipModel {
    /// No slippage at all.
    pub fn none() -> SlipModel {
        SlipModel {
            probability: 0.0,
            mean_duration_frames: 25.0,
            speed_min: 0.0,
            speed_max: 0.0,
        }
    }
}

impl Default for SlipModel {
    fn default() -> Self {
        SlipModel {
            probability: 0.05,
            mean_duration_frames: 25.0,
            speed_min: 0.2,
            speed_max: 0.8,
        }
    }
}

/// Full description of one synthetic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Run length (s).
    pub duration_s: f64,
    /// Frame rate (Hz).
    pub rate_hz: f64,
    /// Body speed profile.
    pub segments: Vec<TwistSegment>,
    /// Gait selector.
    pub gait: GaitType,
    /// Gait period (s).
    pub gait_period_s: f64,
    /// Stance fraction of the gait period, in (0, 1).
    pub duty_factor: f64,
    /// Body center height above ground (m).
    pub body_height: f64,
    /// Swing-foot apex height (m).
    pub step_height: f64,
    /// Slip statistics.
    pub slip: SlipModel,
    /// True calf-length trajectory per leg, FL, FR, RL, RR.
    pub calf_trajectories: [CalfTrajectory; NUM_LEGS],
    /// Sensor noise levels.
    pub noise: SensorNoise,
    /// Contact flag threshold on the measured normal force (N).
    pub contact_force_threshold: f64,
    /// RNG seed; the run is a pure function of this config.
    pub seed: u64,
}

impl ScenarioConfig {
    /// The heavy-slip comparison scenario: 60 s trot with 5% stance-frame
    /// slip and sinusoidal calf lengths spanning the deformation range.
    pub fn standard() -> ScenarioConfig {
        let sinusoid = |phase: f64| CalfTrajectory::Sinusoid {
            mean: (0.182 + 0.253) / 2.0,
            amplitude: (0.253 - 0.182) / 2.0,
            frequency_hz: 0.15,
            phase,
        };
        ScenarioConfig {
            duration_s: 60.0,
            rate_hz: 500.0,
            segments: vec![
                TwistSegment {
                    duration_s: 20.0,
                    velocity: [0.4, 0.0, 0.0],
                    yaw_rate: 0.12,
                },
                TwistSegment {
                    duration_s: 20.0,
                    velocity: [0.45, 0.05, 0.0],
                    yaw_rate: -0.15,
                },
                TwistSegment {
                    duration_s: 20.0,
                    velocity: [0.4, 0.0, 0.0],
                    yaw_rate: 0.1,
                },
            ],
            gait: GaitType::Trot,
            gait_period_s: 0.5,
            duty_factor: 0.5,
            body_height: 0.30,
            step_height: 0.05,
            slip: SlipModel::default(),
            calf_trajectories: [
                sinusoid(0.0),
                sinusoid(std::f64::consts::FRAC_PI_2),
                sinusoid(std::f64::consts::PI),
                sinusoid(3.0 * std::f64::consts::FRAC_PI_2),
            ],
            noise: SensorNoise::default(),
            contact_force_threshold: 10.0,
            seed: 42,
        }
    }

    /// Benign 10 s scenario: no slip, fixed calf lengths, default noise.
    pub fn no_slip_short() -> ScenarioConfig {
        let mut scn = ScenarioConfig::standard();
        scn.duration_s = 10.0;
        scn.slip = SlipModel::none();
        scn.calf_trajectories =
            [CalfTrajectory::Constant(kinematics::NOMINAL_CALF_LENGTH); NUM_LEGS];
        scn
    }

    /// Parameter-tracking scenario: calf lengths ramp 0.226 → 0.20 m over
    /// the first 10 s of a 14 s trot.
    pub fn calf_ramp() -> ScenarioConfig {
        let mut scn = ScenarioConfig::standard();
        scn.duration_s = 14.0;
        scn.slip = SlipModel::none();
        scn.calf_trajectories = [CalfTrajectory::Ramp {
            from: 0.226,
            to: 0.20,
            start_s: 0.0,
            end_s: 10.0,
        }; NUM_LEGS];
        scn
    }

    /// Validates ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.rate_hz > 0.0) {
            return Err(Error::Config("duration and rate must be positive".into()));
        }
        if !(self.duty_factor > 0.0 && self.duty_factor < 1.0) {
            return Err(Error::Config(format!(
                "duty factor {} outside (0, 1)",
                self.duty_factor
            )));
        }
        if self.segments.is_empty() {
            return Err(Error::Config("at least one twist segment required".into()));
        }
        let noise_ok = self.noise.gyro >= 0.0
            && self.noise.accel >= 0.0
            && self.noise.joint_angle >= 0.0
            && self.noise.joint_rate >= 0.0
            && self.noise.torque >= 0.0
            && self.noise.contact_force >= 0.0;
        if !noise_ok {
            return Err(Error::Config(
                "noise standard deviations must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Number of frames the run produces.
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }
}

/// Time series of sensor frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    /// Frames in time order.
    pub frames: Vec<SensorFrame>,
}

/// Ground truth of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthFrame {
    /// Timestamp (s).
    pub time: f64,
    /// True robot state (biases zero).
    pub state: RobotState,
    /// True calf lengths (m).
    pub calf_lengths: [f64; NUM_LEGS],
    /// True foot slip velocity per leg (m/s, world).
    pub slip_velocities: [Vector3<f64>; NUM_LEGS],
    /// True ground-reaction force per leg (N, body frame).
    pub grf: [Vector3<f64>; NUM_LEGS],
    /// True stance flags.
    pub stance: [bool; NUM_LEGS],
}

/// Ground-truth series aligned with a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// Frames in time order.
    pub frames: Vec<GroundTruthFrame>,
}

impl GroundTruth {
    /// True positions as a contiguous series.
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.frames.iter().map(|f| f.state.position).collect()
    }

    /// True calf lengths of one leg.
    pub fn calf_series(&self, leg: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.calf_lengths[leg]).collect()
    }
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// C¹ smoothstep.
fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn smoothstep_deriv(u: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    6.0 * u * (1.0 - u)
}

/// Body twist profile with smooth transitions at segment boundaries.
struct BodyProfile {
    boundaries: Vec<f64>,
    velocities: Vec<Vector3<f64>>,
    yaw_rates: Vec<f64>,
    blend_width: Vec<f64>,
}

impl BodyProfile {
    fn new(segments: &[TwistSegment]) -> BodyProfile {
        let mut boundaries = Vec::new();
        let mut velocities = Vec::new();
        let mut yaw_rates = Vec::new();
        let mut t = 0.0;
        for seg in segments {
            boundaries.push(t);
            velocities.push(Vector3::new(seg.velocity[0], seg.velocity[1], 0.0));
            yaw_rates.push(seg.yaw_rate);
            t += seg.duration_s;
        }
        let mut blend_width = vec![0.0; segments.len()];
        for i in 1..segments.len() {
            let prev = segments[i - 1].duration_s;
            let cur = segments[i].duration_s;
            blend_width[i] = 0.3f64.min(0.5 * prev.min(cur));
        }
        BodyProfile {
            boundaries,
            velocities,
            yaw_rates,
            blend_width,
        }
    }

    /// Body-frame velocity, yaw rate, and the velocity's time derivative.
    fn twist(&self, t: f64) -> (Vector3<f64>, f64, Vector3<f64>) {
        let mut v = self.velocities[0];
        let mut w = self.yaw_rates[0];
        let mut v_dot = Vector3::zeros();
        for i in 1..self.velocities.len() {
            let width = self.blend_width[i];
            let u = if width > 0.0 {
                (t - self.boundaries[i]) / width + 0.5
            } else if t >= self.boundaries[i] {
                1.0
            } else {
                0.0
            };
            let s = smoothstep(u);
            let dv = self.velocities[i] - self.velocities[i - 1];
            let dw = self.yaw_rates[i] - self.yaw_rates[i - 1];
            v += s * dv;
            w += s * dw;
            if width > 0.0 {
                let ds = smoothstep_deriv(u) / width;
                v_dot += ds * dv;
            }
        }
        (v, w, v_dot)
    }
}

/// Body pose sampled along the integrated trajectory.
#[derive(Debug, Clone, Copy)]
struct BodySample {
    position: Vector3<f64>,
    yaw: f64,
    velocity_world: Vector3<f64>,
    accel_world: Vector3<f64>,
    omega_body: Vector3<f64>,
}

/// Integrates the planar twist ODE with RK4 at sub-frame resolution and
/// samples body states at every frame time.
fn integrate_body(
    profile: &BodyProfile,
    n_frames: usize,
    dt: f64,
    body_height: f64,
) -> Vec<BodySample> {
    const SUBSTEPS: usize = 8;
    let h = dt / SUBSTEPS as f64;
    let deriv = |t: f64, state: &Vector3<f64>| -> Vector3<f64> {
        let (v_b, w, _) = profile.twist(t);
        let v_world = rot_z(state.z) * v_b;
        Vector3::new(v_world.x, v_world.y, w)
    };

    let mut samples = Vec::with_capacity(n_frames);
    // State: (x, y, yaw).
    let mut state = Vector3::zeros();
    for k in 0..n_frames {
        let t = k as f64 * dt;
        let (v_b, w, v_b_dot) = profile.twist(t);
        let rot = rot_z(state.z);
        let v_world = rot * v_b;
        // d/dt (Rz(ψ) v_b) = Rz(ψ)([ω e_z]× v_b + v̇_b)
        let a_world = rot * (Vector3::new(0.0, 0.0, w).cross(&v_b) + v_b_dot);
        samples.push(BodySample {
            position: Vector3::new(state.x, state.y, body_height),
            yaw: state.z,
            velocity_world: v_world,
            accel_world: a_world,
            omega_body: Vector3::new(0.0, 0.0, w),
        });
        for s in 0..SUBSTEPS {
            let ts = t + s as f64 * h;
            let k1 = deriv(ts, &state);
            let k2 = deriv(ts + 0.5 * h, &(state + 0.5 * h * k1));
            let k3 = deriv(ts + 0.5 * h, &(state + 0.5 * h * k2));
            let k4 = deriv(ts + h, &(state + h * k3));
            state += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    samples
}

/// Gait phase of one leg: `(stance, u, cycle)` where `u` is the normalized
/// progress through the current stance or swing.
fn leg_phase(gait: GaitType, period: f64, duty: f64, offset: f64, t: f64) -> (bool, f64, i64) {
    match gait {
        GaitType::Stand => (true, 0.5, 0),
        GaitType::Trot => {
            let phase = t / period + offset;
            let cycle = phase.floor();
            let frac = phase - cycle;
            if frac < duty {
                (true, frac / duty, cycle as i64)
            } else {
                (false, (frac - duty) / (1.0 - duty), cycle as i64)
            }
        }
    }
}

/// Trot phase offsets: FL and RR lead, FR and RL trail by half a period.
const TROT_OFFSETS: [f64; NUM_LEGS] = [0.0, 0.5, 0.5, 0.0];

struct LegRuntime {
    foot: Vector3<f64>,
    swing_from: Vector3<f64>,
    swing_to: Vector3<f64>,
    swing_cycle: i64,
    slip_frames_left: usize,
    slip_velocity: Vector3<f64>,
}

/// Generates the sensor stream and aligned ground truth for a scenario.
pub fn generate(scn: &ScenarioConfig, geometry: &RobotGeometry) -> Result<(Dataset, GroundTruth)> {
    scn.validate()?;
    let n_frames = scn.frame_count();
    let dt = 1.0 / scn.rate_hz;
    let profile = BodyProfile::new(&scn.segments);
    let body = integrate_body(&profile, n_frames, dt, scn.body_height);
    let mut rng = ChaCha12Rng::seed_from_u64(scn.seed);
    let gravity = Vector3::new(0.0, 0.0, -GRAVITY);

    // Ground projection of the shoulder (hip + lateral offset) at frame k.
    let shoulder_at = |k: usize, leg: usize| -> Vector3<f64> {
        let sample = &body[k.min(n_frames - 1)];
        let rot = rot_z(sample.yaw);
        let geo = &geometry.legs[leg];
        let shoulder_body = geo.hip_position + Vector3::new(0.0, geo.signed_offset(), 0.0);
        let world = sample.position + rot * shoulder_body;
        Vector3::new(world.x, world.y, 0.0)
    };
    // Foothold for the stance whose touchdown happens at `t_td`.
    let foothold_for = |t_td: f64, leg: usize| -> Vector3<f64> {
        let t_mid = t_td + 0.5 * scn.duty_factor * scn.gait_period_s;
        let k = ((t_mid / dt).round().max(0.0) as usize).min(n_frames - 1);
        shoulder_at(k, leg)
    };

    let mut legs: Vec<LegRuntime> = (0..NUM_LEGS)
        .map(|i| {
            let (stance, _, cycle) = leg_phase(
                scn.gait,
                scn.gait_period_s,
                scn.duty_factor,
                TROT_OFFSETS[i],
                0.0,
            );
            let foot = if stance {
                let t_td = (cycle as f64 - TROT_OFFSETS[i]) * scn.gait_period_s;
                foothold_for(t_td.max(0.0), i)
            } else {
                // Park a swing leg at its upcoming touchdown target.
                let t_td = (cycle as f64 + 1.0 - TROT_OFFSETS[i]) * scn.gait_period_s;
                foothold_for(t_td, i)
            };
            LegRuntime {
                foot,
                swing_from: foot,
                swing_to: foot,
                swing_cycle: i64::MIN,
                slip_frames_left: 0,
                slip_velocity: Vector3::zeros(),
            }
        })
        .collect();

    let mut dataset = Dataset {
        frames: Vec::with_capacity(n_frames),
    };
    let mut truth = GroundTruth {
        frames: Vec::with_capacity(n_frames),
    };

    let slip_start_prob = if scn.slip.probability > 0.0 {
        (scn.slip.probability / scn.slip.mean_duration_frames).min(1.0)
    } else {
        0.0
    };

    for k in 0..n_frames {
        let t = k as f64 * dt;
        let sample = &body[k];
        let rot = rot_z(sample.yaw);
        let orientation = Quat::exp_unchecked(&Vector3::new(0.0, 0.0, sample.yaw));

        let mut stance_flags = [false; NUM_LEGS];
        let mut slip_velocities = [Vector3::zeros(); NUM_LEGS];
        let mut foot_world = [Vector3::zeros(); NUM_LEGS];
        let mut foot_vel_world = [Vector3::zeros(); NUM_LEGS];
        let mut calf = [0.0; NUM_LEGS];

        for i in 0..NUM_LEGS {
            calf[i] = scn.calf_trajectories[i].value(t);
            let (stance, u, cycle) = leg_phase(
                scn.gait,
                scn.gait_period_s,
                scn.duty_factor,
                TROT_OFFSETS[i],
                t,
            );
            stance_flags[i] = stance;
            let leg = &mut legs[i];

            if stance {
                if leg.slip_frames_left == 0
                    && slip_start_prob > 0.0
                    && rng.gen::<f64>() < slip_start_prob
                {
                    let speed = rng.gen_range(scn.slip.speed_min..=scn.slip.speed_max);
                    let angle = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                    // Geometric duration with the configured mean.
                    let p = 1.0 / scn.slip.mean_duration_frames;
                    let uniform: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let frames = 1 + (uniform.ln() / (1.0 - p).ln()).floor() as usize;
                    leg.slip_frames_left = frames;
                    leg.slip_velocity = speed * Vector3::new(angle.cos(), angle.sin(), 0.0);
                }
                if leg.slip_frames_left > 0 {
                    // The foot drags with the slip velocity unless that would
                    // leave the workspace; then the episode ends early.
                    let tentative = leg.foot + leg.slip_velocity * dt;
                    let foot_body = rot.transpose() * (tentative - sample.position);
                    if kinematics::inverse_kinematics(&foot_body, &geometry.legs[i], calf[i])
                        .is_ok()
                    {
                        slip_velocities[i] = leg.slip_velocity;
                        leg.foot = tentative;
                        leg.slip_frames_left -= 1;
                    } else {
                        leg.slip_frames_left = 0;
                        leg.slip_velocity = Vector3::zeros();
                    }
                }
                foot_world[i] = leg.foot;
                foot_vel_world[i] = slip_velocities[i];
            } else {
                if leg.swing_cycle != cycle {
                    leg.swing_cycle = cycle;
                    leg.swing_from = leg.foot;
                    let t_td = (cycle as f64 + 1.0 - TROT_OFFSETS[i]) * scn.gait_period_s;
                    leg.swing_to = foothold_for(t_td, i);
                    leg.slip_frames_left = 0;
                    leg.slip_velocity = Vector3::zeros();
                }
                let swing_time = (1.0 - scn.duty_factor) * scn.gait_period_s;
                // Quintic blend: zero velocity and acceleration at both ends.
                let blend = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
                let blend_dot = 30.0 * u * u * (1.0 - u) * (1.0 - u) / swing_time;
                let lift = scn.step_height * (std::f64::consts::PI * u).sin().powi(2);
                let lift_dot = scn.step_height
                    * std::f64::consts::PI
                    * (2.0 * std::f64::consts::PI * u).sin()
                    / swing_time;
                let delta = leg.swing_to - leg.swing_from;
                leg.foot = leg.swing_from + blend * delta + Vector3::new(0.0, 0.0, lift);
                foot_world[i] = leg.foot;
                foot_vel_world[i] = blend_dot * delta + Vector3::new(0.0, 0.0, lift_dot);
            }
        }

        // Quasi-static vertical load split over stance legs.
        let n_stance = stance_flags.iter().filter(|&&s| s).count();
        let share = if n_stance > 0 {
            geometry.body_mass * GRAVITY / n_stance as f64
        } else {
            0.0
        };

        let mut true_state = RobotState::zeroed();
        true_state.position = sample.position;
        true_state.velocity = sample.velocity_world;
        true_state.orientation = orientation;
        true_state.foot_positions = foot_world;

        let mut grf = [Vector3::zeros(); NUM_LEGS];
        let mut frame_legs = [LegSensors::zeroed(); NUM_LEGS];
        for i in 0..NUM_LEGS {
            let geo = &geometry.legs[i];
            let foot_body = rot.transpose() * (foot_world[i] - sample.position);
            let phi =
                kinematics::inverse_kinematics(&foot_body, geo, calf[i]).map_err(|e| {
                    Error::Scenario {
                        frame: k,
                        msg: format!("leg {i}: {e}"),
                    }
                })?;
            // ḟ_body = -[ω]× f_body + Rᵀ(ṡ - v)
            let foot_body_vel = -sample.omega_body.cross(&foot_body)
                + rot.transpose() * (foot_vel_world[i] - sample.velocity_world);
            let jac = kinematics::jacobian(&phi, geo, calf[i]);
            let phidot = jac.lu().solve(&foot_body_vel).ok_or(Error::Scenario {
                frame: k,
                msg: format!("leg {i}: singular Jacobian while generating joint rates"),
            })?;

            let force_world = if stance_flags[i] {
                Vector3::new(0.0, 0.0, share)
            } else {
                Vector3::zeros()
            };
            let force_body = rot.transpose() * force_world;
            grf[i] = force_body;
            let torque = kinematics::statics_torque(&phi, geo, calf[i], &force_body);

            let noisy_force = force_body.z + scn.noise.contact_force * standard_normal(&mut rng);
            frame_legs[i] = LegSensors {
                joint_angles: phi
                    + Vector3::new(
                        scn.noise.joint_angle * standard_normal(&mut rng),
                        scn.noise.joint_angle * standard_normal(&mut rng),
                        scn.noise.joint_angle * standard_normal(&mut rng),
                    ),
                joint_velocities: phidot
                    + Vector3::new(
                        scn.noise.joint_rate * standard_normal(&mut rng),
                        scn.noise.joint_rate * standard_normal(&mut rng),
                        scn.noise.joint_rate * standard_normal(&mut rng),
                    ),
                joint_torques: torque
                    + Vector3::new(
                        scn.noise.torque * standard_normal(&mut rng),
                        scn.noise.torque * standard_normal(&mut rng),
                        scn.noise.torque * standard_normal(&mut rng),
                    ),
                normal_force: noisy_force,
                contact: noisy_force >= scn.contact_force_threshold,
            };
        }

        // IMU: gyro reads the body rate, accelerometer the specific force.
        let specific_force = rot.transpose() * (sample.accel_world - gravity);
        let frame = SensorFrame {
            time: t,
            gyro: sample.omega_body
                + Vector3::new(
                    scn.noise.gyro * standard_normal(&mut rng),
                    scn.noise.gyro * standard_normal(&mut rng),
                    scn.noise.gyro * standard_normal(&mut rng),
                ),
            accel: specific_force
                + Vector3::new(
                    scn.noise.accel * standard_normal(&mut rng),
                    scn.noise.accel * standard_normal(&mut rng),
                    scn.noise.accel * standard_normal(&mut rng),
                ),
            legs: frame_legs,
        };

        dataset.frames.push(frame);
        truth.frames.push(GroundTruthFrame {
            time: t,
            state: true_state,
            calf_lengths: calf,
            slip_velocities,
            grf,
            stance: stance_flags,
        });
    }

    Ok((dataset, truth))
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Applies a single-frame slip of velocity `slip` to `leg`, modifying a
/// (sensor, truth) frame pair in place: the true foot moves by `slip·dt`
/// and the pre-noise encoder readings are rebuilt from the slipped chain,
/// so the leg's velocity-residual block deviates by exactly `‖slip‖` when
/// the measurement model is evaluated at ground truth.
///
/// Operates on pre-noise streams; errors if the leg is in swing.
pub fn inject_slip(
    frame: &mut SensorFrame,
    truth: &mut GroundTruthFrame,
    leg: usize,
    slip: &Vector3<f64>,
    dt: f64,
    geometry: &RobotGeometry,
) -> Result<()> {
    if !truth.stance[leg] {
        return Err(Error::InvalidArgument(format!(
            "cannot inject slip: leg {leg} is in swing"
        )));
    }
    let rot = truth.state.orientation.rotation_matrix();
    truth.state.foot_positions[leg] += slip * dt;
    truth.slip_velocities[leg] = *slip;

    let geo = &geometry.legs[leg];
    let foot_body = rot.transpose() * (truth.state.foot_positions[leg] - truth.state.position);
    let l_c = truth.calf_lengths[leg];
    let phi = kinematics::inverse_kinematics(&foot_body, geo, l_c)?;
    let omega = frame.gyro; // pre-noise: the true body rate
    let foot_body_vel =
        -omega.cross(&foot_body) + rot.transpose() * (slip - truth.state.velocity);
    let jac = kinematics::jacobian(&phi, geo, l_c);
    let phidot = jac
        .lu()
        .solve(&foot_body_vel)
        .ok_or_else(|| Error::numerical("singular Jacobian while injecting slip"))?;
    frame.legs[leg].joint_angles = phi;
    frame.legs[leg].joint_velocities = phidot;
    frame.legs[leg].joint_torques = kinematics::statics_torque(&phi, geo, l_c, &truth.grf[leg]);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::LegParams;
    use crate::measurement::{measure, pos_row, vel_row};
    use approx::assert_abs_diff_eq;

    fn quiet(scn: &mut ScenarioConfig) {
        scn.noise = SensorNoise::zero();
        scn.slip = SlipModel::none();
    }

    fn standing_config() -> ScenarioConfig {
        let mut scn = ScenarioConfig::no_slip_short();
        quiet(&mut scn);
        scn.duration_s = 2.0;
        scn.gait = GaitType::Stand;
        scn.segments = vec![TwistSegment {
            duration_s: 2.0,
            velocity: [0.0, 0.0, 0.0],
            yaw_rate: 0.0,
        }];
        scn
    }

    #[test]
    fn noiseless_run_is_measurement_consistent() {
        let mut scn = ScenarioConfig::no_slip_short();
        quiet(&mut scn);
        scn.duration_s = 4.0;
        let geometry = RobotGeometry::default();
        let (dataset, truth) = generate(&scn, &geometry).unwrap();
        let params = LegParams::nominal();
        for (frame, gt) in dataset.frames.iter().zip(truth.frames.iter()) {
            let y = measure(&gt.state, frame, &params, &geometry);
            for leg in 0..NUM_LEGS {
                if gt.stance[leg] {
                    for r in 0..3 {
                        assert!(
                            y[pos_row(leg) + r].abs() < 1e-9,
                            "t={} leg {leg} pos residual {}",
                            frame.time,
                            y[pos_row(leg) + r]
                        );
                        assert!(
                            y[vel_row(leg) + r].abs() < 1e-9,
                            "t={} leg {leg} vel residual {}",
                            frame.time,
                            y[vel_row(leg) + r]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn kinematic_consistency_of_ground_truth() {
        let mut scn = ScenarioConfig::no_slip_short();
        quiet(&mut scn);
        scn.duration_s = 3.0;
        let geometry = RobotGeometry::default();
        let (dataset, truth) = generate(&scn, &geometry).unwrap();
        for (frame, gt) in dataset.frames.iter().zip(truth.frames.iter()) {
            let rot = gt.state.orientation.rotation_matrix();
            for leg in 0..NUM_LEGS {
                if gt.stance[leg] && gt.slip_velocities[leg].norm() == 0.0 {
                    let fk = kinematics::fk(
                        &frame.legs[leg].joint_angles,
                        &geometry.legs[leg],
                        gt.calf_lengths[leg],
                    );
                    let chain = rot * fk;
                    let direct = gt.state.foot_positions[leg] - gt.state.position;
                    assert!((chain - direct).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn statics_identity_on_all_contact_frames() {
        let mut scn = ScenarioConfig::standard();
        quiet(&mut scn);
        scn.duration_s = 5.0;
        let geometry = RobotGeometry::default();
        let (dataset, truth) = generate(&scn, &geometry).unwrap();
        let mut checked = 0usize;
        for (frame, gt) in dataset.frames.iter().zip(truth.frames.iter()) {
            for leg in 0..NUM_LEGS {
                if gt.stance[leg] {
                    let expected = kinematics::statics_torque(
                        &frame.legs[leg].joint_angles,
                        &geometry.legs[leg],
                        gt.calf_lengths[leg],
                        &gt.grf[leg],
                    );
                    assert!(
                        (frame.legs[leg].joint_torques - expected).norm() < 1e-9,
                        "torque identity violated at t={}",
                        frame.time
                    );
                    // And the normal-force inversion recovers the true GRF z.
                    let fz = kinematics::statics_normal_force(
                        &frame.legs[leg].joint_angles,
                        &geometry.legs[leg],
                        gt.calf_lengths[leg],
                        &frame.legs[leg].joint_torques,
                    )
                    .unwrap();
                    assert_abs_diff_eq!(fz, gt.grf[leg].z, epsilon = 1e-9);
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn standing_forces_balance_body_weight() {
        let scn = standing_config();
        let geometry = RobotGeometry::default();
        let (dataset, truth) = generate(&scn, &geometry).unwrap();
        for (frame, gt) in dataset.frames.iter().zip(truth.frames.iter()) {
            assert_eq!(gt.stance, [true; NUM_LEGS]);
            let total: f64 = frame.legs.iter().map(|l| l.normal_force).sum();
            assert_abs_diff_eq!(total, geometry.body_mass * GRAVITY, epsilon = 1e-9);
            assert!(frame.legs.iter().all(|l| l.contact));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let scn = ScenarioConfig::standard();
        let geometry = RobotGeometry::default();
        let mut short = scn.clone();
        short.duration_s = 2.0;
        let (d1, t1) = generate(&short, &geometry).unwrap();
        let (d2, t2) = generate(&short, &geometry).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn slip_frame_count_matches_model() {
        let mut scn = ScenarioConfig::standard();
        scn.duration_s = 60.0;
        scn.noise = SensorNoise::zero();
        let geometry = RobotGeometry::default();
        let (_, truth) = generate(&scn, &geometry).unwrap();
        let mut stance_frames = 0usize;
        let mut slip_frames = 0usize;
        for gt in &truth.frames {
            for leg in 0..NUM_LEGS {
                if gt.stance[leg] {
                    stance_frames += 1;
                    if gt.slip_velocities[leg].norm() > 0.0 {
                        slip_frames += 1;
                    }
                }
            }
        }
        let expected = scn.slip.probability * stance_frames as f64;
        // Episodes inflate the count variance by roughly their mean length.
        let episodes = expected / scn.slip.mean_duration_frames;
        let three_sigma = 3.0 * episodes.sqrt() * scn.slip.mean_duration_frames;
        let tolerance = three_sigma + 0.25 * expected; // stance-end truncation bias
        assert!(
            (slip_frames as f64 - expected).abs() < tolerance,
            "slip frames {slip_frames}, expected {expected} ± {tolerance}"
        );
        assert!(slip_frames > 0);
    }

    #[test]
    fn trot_has_two_legs_in_stance_at_mid_stance() {
        let mut scn = ScenarioConfig::no_slip_short();
        quiet(&mut scn);
        scn.duration_s = 4.0;
        let geometry = RobotGeometry::default();
        let (dataset, truth) = generate(&scn, &geometry).unwrap();
        let period = scn.gait_period_s;
        for (frame, gt) in dataset.frames.iter().zip(truth.frames.iter()) {
            let phase = (frame.time / period).fract();
            let mid_stance = (phase - 0.25 * period).abs() < 1e-6
                || (phase - 0.75 * period).abs() < 1e-6;
            if mid_stance {
                assert_eq!(gt.stance.iter().filter(|&&s| s).count(), 2);
                assert_eq!(frame.legs.iter().filter(|l| l.contact).count(), 2);
            }
        }
        // Over the whole run, stance counts in a 0.5-duty trot are always 2.
        for gt in &truth.frames {
            assert_eq!(gt.stance.iter().filter(|&&s| s).count(), 2);
        }
    }

    #[test]
    fn truth_satisfies_continuous_motion_to_second_order() {
        let geometry = RobotGeometry::default();
        let residual = |rate: f64| -> f64 {
            let mut scn = ScenarioConfig::no_slip_short();
            quiet(&mut scn);
            scn.duration_s = 4.0;
            scn.rate_hz = rate;
            let (_, truth) = generate(&scn, &geometry).unwrap();
            let dt = 1.0 / rate;
            let mut worst = 0.0f64;
            for k in 1..truth.frames.len() - 1 {
                let fd = (truth.frames[k + 1].state.position - truth.frames[k - 1].state.position)
                    / (2.0 * dt);
                worst = worst.max((fd - truth.frames[k].state.velocity).norm());
            }
            worst
        };
        let coarse = residual(250.0);
        let fine = residual(500.0);
        assert!(coarse < 1e-4, "midpoint residual too large: {coarse}");
        // Halving the step must shrink the residual about fourfold.
        assert!(
            fine < coarse / 3.0,
            "residual not O(dt²): coarse {coarse}, fine {fine}"
        );
    }

    #[test]
    fn unreachable_scenario_names_the_frame() {
        let mut scn = standing_config();
        scn.body_height = 0.6;
        let err = generate(&scn, &RobotGeometry::default()).unwrap_err();
        match err {
            Error::Scenario { frame, .. } => assert_eq!(frame, 0),
            other => panic!("expected scenario error, got {other}"),
        }
    }

    #[test]
    fn inject_slip_zero_is_identity() {
        let scn = standing_config();
        let geometry = RobotGeometry::default();
        let (dataset, truth) = generate(&scn, &geometry).unwrap();
        let mut frame = dataset.frames[100];
        let mut gt = truth.frames[100];
        inject_slip(&mut frame, &mut gt, 0, &Vector3::zeros(), 0.002, &geometry).unwrap();
        assert_eq!(frame, dataset.frames[100]);
        assert_eq!(gt.state.foot_positions, truth.frames[100].state.foot_positions);
    }

    #[test]
    fn inject_slip_creates_velocity_residual() {
        let scn = standing_config();
        let geometry = RobotGeometry::default();
        let (dataset, truth) = generate(&scn, &geometry).unwrap();
        let mut frame = dataset.frames[200];
        let mut gt = truth.frames[200];
        let slip = Vector3::new(0.5, 0.0, 0.0);
        inject_slip(&mut frame, &mut gt, 1, &slip, 0.002, &geometry).unwrap();
        let y = measure(&gt.state, &frame, &LegParams::nominal(), &geometry);
        let vel = Vector3::new(
            y[vel_row(1)],
            y[vel_row(1) + 1],
            y[vel_row(1) + 2],
        );
        assert_abs_diff_eq!(vel.norm(), 0.5, epsilon = 1e-9);
        // Other legs stay consistent.
        for leg in [0usize, 2, 3] {
            for r in 0..3 {
                assert!(y[vel_row(leg) + r].abs() < 1e-9);
                assert!(y[pos_row(leg) + r].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inject_slip_rejects_swing_leg() {
        let mut scn = ScenarioConfig::no_slip_short();
        quiet(&mut scn);
        scn.duration_s = 1.0;
        let geometry = RobotGeometry::default();
        let (dataset, truth) = generate(&scn, &geometry).unwrap();
        // Find a frame where leg 1 is in swing.
        let k = truth.frames.iter().position(|g| !g.stance[1]).unwrap();
        let mut frame = dataset.frames[k];
        let mut gt = truth.frames[k];
        let err = inject_slip(
            &mut frame,
            &mut gt,
            1,
            &Vector3::new(0.1, 0.0, 0.0),
            0.002,
            &geometry,
        );
        assert!(err.is_err());
    }

    #[test]
    fn calf_trajectory_shapes() {
        let ramp = CalfTrajectory::Ramp {
            from: 0.226,
            to: 0.20,
            start_s: 1.0,
            end_s: 11.0,
        };
        assert_eq!(ramp.value(0.0), 0.226);
        assert_abs_diff_eq!(ramp.value(6.0), 0.213, epsilon = 1e-12);
        assert_eq!(ramp.value(20.0), 0.20);
        let sin = CalfTrajectory::Sinusoid {
            mean: 0.2175,
            amplitude: 0.0355,
            frequency_hz: 0.3,
            phase: 0.0,
        };
        for k in 0..100 {
            let v = sin.value(k as f64 * 0.1);
            assert!((0.182..=0.253).contains(&v));
        }
    }
}
