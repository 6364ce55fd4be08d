//! Estimator orchestration: per frame, optionally run the statics-based
//! parameter filter, feed its calf-length estimate into the chosen state
//! filter, and maintain the prior covariance recursion.
//!
//! Five variants share this loop:
//!
//! * `QEKF` — error-state EKF with fixed calf lengths;
//! * `UKF-OR` — unscented filter with per-leg Mahalanobis gating;
//! * `DualQEKF` — QEKF plus the parameter filter;
//! * `BetaKF` — robust divergence-based state filter, fixed calf lengths;
//! * `DualBetaKF` — the full dual robust estimator.
//!
//! The parameter filter consumes only torque/force/encoder data; its update
//! path cannot observe the state belief by construction (see
//! [`crate::filters::ukf_param_step`]'s signature).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::beta::{self, riccati_prior, SolverSettings};
use crate::error::{Error, Result};
use crate::filters::{
    iekf_mean_update, qekf_step, ukf_or_step, ukf_param_step, GateMode, GaussianBelief,
    ParamBelief, StepContext, UtParams, DEFAULT_GATE_THRESHOLD,
};
use crate::kinematics::{LegParams, RobotGeometry, NOMINAL_CALF_LENGTH};
use crate::measurement::{
    inflate_covariance, leg_row_mask, measurement_jacobian, pos_row,
    sigma_with_param_uncertainty, DEFAULT_ROW_INFLATION,
};
use crate::process::{process_jacobian, process_noise_for_contacts, propagate, ControlInput};
use crate::sim::Dataset;
use crate::types::{
    blocks, NoiseConfig, NoiseStds, ParamVector, RobotState, SensorFrame, StateCovariance,
    NUM_LEGS,
};

/// The estimator family to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorVariant {
    /// Quaternion error-state EKF, fixed leg parameters.
    #[serde(rename = "QEKF")]
    Qekf,
    /// UKF with Mahalanobis outlier rejection, fixed leg parameters.
    #[serde(rename = "UKF-OR")]
    UkfOr,
    /// QEKF fed by the statics-based parameter filter.
    #[serde(rename = "DualQEKF")]
    DualQekf,
    /// Robust divergence-based state filter, fixed leg parameters.
    #[serde(rename = "BetaKF")]
    BetaKf,
    /// Robust state filter fed by the parameter filter.
    #[serde(rename = "DualBetaKF")]
    DualBetaKf,
    /// Iterated EKF (classical MAP oracle); not part of the comparison set
    /// but available for degeneracy checks.
    #[serde(rename = "IEKF")]
    Iekf,
}

impl EstimatorVariant {
    /// Whether the parameter filter runs.
    pub fn is_dual(self) -> bool {
        matches!(self, EstimatorVariant::DualQekf | EstimatorVariant::DualBetaKf)
    }

    /// Canonical label used in file names and tables.
    pub fn label(self) -> &'static str {
        match self {
            EstimatorVariant::Qekf => "QEKF",
            EstimatorVariant::UkfOr => "UKF-OR",
            EstimatorVariant::DualQekf => "DualQEKF",
            EstimatorVariant::BetaKf => "BetaKF",
            EstimatorVariant::DualBetaKf => "DualBetaKF",
            EstimatorVariant::Iekf => "IEKF",
        }
    }
}

/// Initial belief scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBelief {
    /// Initial calf-length estimate (m).
    pub param_mean: f64,
    /// Initial calf-length standard deviation (m).
    pub param_std: f64,
    /// Initial position std (m).
    pub position_std: f64,
    /// Initial velocity std (m/s).
    pub velocity_std: f64,
    /// Initial orientation std (rad).
    pub orientation_std: f64,
    /// Initial foot-position std (m).
    pub foot_std: f64,
    /// Initial gyro-bias std (rad/s).
    pub gyro_bias_std: f64,
    /// Initial accel-bias std (m/s²).
    pub accel_bias_std: f64,
}

impl Default for InitialBelief {
    fn default() -> Self {
        InitialBelief {
            param_mean: NOMINAL_CALF_LENGTH,
            param_std: 0.01,
            position_std: 1e-3,
            velocity_std: 1e-2,
            orientation_std: 1e-2,
            foot_std: 1e-3,
            gyro_bias_std: 3e-4,
            accel_bias_std: 3e-3,
        }
    }
}

impl InitialBelief {
    /// Diagonal initial state covariance.
    pub fn state_covariance(&self) -> StateCovariance {
        let mut p = StateCovariance::zeros();
        let put = |p: &mut StateCovariance, off: usize, sigma: f64| {
            for k in 0..3 {
                p[(off + k, off + k)] = sigma * sigma;
            }
        };
        put(&mut p, blocks::DP, self.position_std);
        put(&mut p, blocks::DV, self.velocity_std);
        put(&mut p, blocks::DTHETA, self.orientation_std);
        for i in 0..NUM_LEGS {
            put(&mut p, blocks::foot(i), self.foot_std);
        }
        put(&mut p, blocks::DBG, self.gyro_bias_std);
        put(&mut p, blocks::DBA, self.accel_bias_std);
        p
    }
}

/// Full configuration of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Which estimator to run.
    pub variant: EstimatorVariant,
    /// Noise standard deviations the covariances are built from.
    #[serde(default)]
    pub noise: NoiseStds,
    /// Robustness parameter; required for the BetaKF variants.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Innovation gate threshold; required for UKF-OR.
    #[serde(default)]
    pub gate_threshold: Option<f64>,
    /// Gate granularity for UKF-OR.
    #[serde(default)]
    pub gate_mode: GateMode,
    /// Solver controls for the BetaKF variants.
    #[serde(default)]
    pub solver: SolverSettings,
    /// Unscented-transform parameters.
    #[serde(default)]
    pub ut: UtParams,
    /// Variance inflation for non-contact (and gated) rows.
    #[serde(default = "default_row_inflation")]
    pub row_inflation: f64,
    /// Process-noise inflation for swing legs' foot blocks.
    #[serde(default = "default_foot_inflation")]
    pub foot_inflation: f64,
    /// Contact-force threshold (N) used when frames carry no flags.
    #[serde(default = "default_contact_threshold")]
    pub contact_force_threshold: f64,
    /// Initial belief scales.
    #[serde(default)]
    pub initial: InitialBelief,
}

fn default_row_inflation() -> f64 {
    DEFAULT_ROW_INFLATION
}

fn default_foot_inflation() -> f64 {
    1e4
}

fn default_contact_threshold() -> f64 {
    10.0
}

impl EstimatorConfig {
    /// Baseline configuration for a variant.
    pub fn for_variant(variant: EstimatorVariant) -> EstimatorConfig {
        EstimatorConfig {
            variant,
            noise: NoiseStds::default(),
            beta: match variant {
                EstimatorVariant::BetaKf | EstimatorVariant::DualBetaKf => Some(1e-3),
                _ => None,
            },
            gate_threshold: match variant {
                EstimatorVariant::UkfOr => Some(DEFAULT_GATE_THRESHOLD),
                _ => None,
            },
            gate_mode: GateMode::PerLeg,
            solver: SolverSettings::default(),
            ut: UtParams::default(),
            row_inflation: DEFAULT_ROW_INFLATION,
            foot_inflation: 1e4,
            contact_force_threshold: 10.0,
            initial: InitialBelief::default(),
        }
    }

    /// Checks variant-specific required fields.
    pub fn validate(&self) -> Result<()> {
        match self.variant {
            EstimatorVariant::BetaKf | EstimatorVariant::DualBetaKf => {
                let beta = self.beta.ok_or_else(|| {
                    Error::Config(format!("{} requires `beta`", self.variant.label()))
                })?;
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(Error::Config(format!("beta {beta} outside (0, 1)")));
                }
                self.solver.validate().map_err(|e| Error::Config(e.to_string()))?;
            }
            EstimatorVariant::UkfOr => {
                let th = self.gate_threshold.ok_or_else(|| {
                    Error::Config("UKF-OR requires `gate_threshold`".into())
                })?;
                if !(th > 0.0) {
                    return Err(Error::Config(format!("gate threshold {th} must be > 0")));
                }
            }
            _ => {}
        }
        if !(self.row_inflation >= 1.0) {
            return Err(Error::Config("row inflation must be >= 1".into()));
        }
        Ok(())
    }

    /// Builds the covariance bundle for this configuration.
    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig::from_stds(&self.noise, self.beta.unwrap_or(1e-3))
    }
}

/// Per-frame estimator output.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    /// Frame timestamp (s).
    pub time: f64,
    /// Index of the frame in the input sequence.
    pub frame_index: usize,
    /// Posterior state estimate.
    pub state: RobotState,
    /// Calf-length estimate (the initial value for non-dual variants).
    pub params: ParamVector,
    /// Step diagnostics.
    pub diagnostics: RecordDiagnostics,
}

/// Diagnostics attached to each output record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordDiagnostics {
    /// Iterations used by the state update (1 for single-shot filters).
    pub solver_iterations: usize,
    /// Whether the iterative solver hit a tolerance.
    pub converged: bool,
    /// Legs gated by the outlier test this frame.
    pub gated_legs: [bool; NUM_LEGS],
    /// Statics-filter innovation norm (N); zero when the parameter filter
    /// did not update.
    pub param_innovation: f64,
    /// Smallest covariance eigenvalue seen before flooring this frame.
    pub min_covariance_eigenvalue: f64,
    /// Measurement-residual norm at the posterior state.
    pub residual_norm: f64,
    /// Final measurement-weight ratio `w/w_max` of the robust solve (1 for
    /// non-robust filters).
    pub weight_ratio: f64,
}

/// Full output of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimatorOutput {
    /// One record per input frame, in time order.
    pub records: Vec<EstimateRecord>,
}

impl EstimatorOutput {
    /// Position series of the estimate.
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.records.iter().map(|r| r.state.position).collect()
    }

    /// Calf-length series of one leg.
    pub fn calf_series(&self, leg: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.params[leg]).collect()
    }
}

enum FilterCore {
    Gaussian(GaussianBelief),
    Beta {
        mean: RobotState,
        prior_cov: StateCovariance,
        prior_ready: bool,
    },
}

/// Running state of one estimator.
pub struct EstimatorContext {
    config: EstimatorConfig,
    noise: NoiseConfig,
    geometry: RobotGeometry,
    core: FilterCore,
    param: ParamBelief,
    initial_params: ParamVector,
    frame_index: usize,
    last_time: Option<f64>,
    last_contact: Option<[bool; NUM_LEGS]>,
}

/// Re-initializes the feet that just touched down from the kinematic
/// chain: `ŝᵢ ← p̂ + R(q̂)·fk(φ̃ᵢ; ϱ̂ᵢ)`, with the covariance mapped through
/// the same relation plus fresh forward-kinematics noise. A landing foot
/// carries no usable history, and without this reset the stale swing-foot
/// state shows up as a spurious measurement outlier at every touchdown.
fn reset_touchdown_feet(
    state: &mut RobotState,
    cov: &mut StateCovariance,
    rising: &[bool; NUM_LEGS],
    frame: &SensorFrame,
    params: &LegParams,
    geometry: &RobotGeometry,
    sigma: &crate::types::MeasCovariance,
) {
    let rot = state.orientation.rotation_matrix();
    for i in 0..NUM_LEGS {
        if !rising[i] {
            continue;
        }
        let fk = crate::kinematics::fk(
            &frame.legs[i].joint_angles,
            &geometry.legs[i],
            params.calf_lengths[i],
        );
        state.foot_positions[i] = state.position + rot * fk;

        // δs' = δp - R[fk]ₓ δθ + η, so P ← G P Gᵀ + E η E ᵀ with G identity
        // outside the foot-i rows.
        let mut g = StateCovariance::identity();
        let off = blocks::foot(i);
        g.fixed_view_mut::<3, 3>(off, off)
            .copy_from(&nalgebra::Matrix3::zeros());
        g.fixed_view_mut::<3, 3>(off, blocks::DP)
            .copy_from(&nalgebra::Matrix3::identity());
        g.fixed_view_mut::<3, 3>(off, blocks::DTHETA)
            .copy_from(&(-rot * crate::types::skew(&fk)));
        *cov = g * *cov * g.transpose();
        for k in 0..3 {
            cov[(off + k, off + k)] += sigma[(pos_row(i) + k, pos_row(i) + k)];
        }
        crate::types::symmetrize(cov);
    }
}

/// Prior covariance seeding: `P₁|₀ = F₀ P₀ F₀ᵀ + Q₀`.
pub fn initial_prior(
    p0: &StateCovariance,
    f0: &StateCovariance,
    q0: &StateCovariance,
) -> StateCovariance {
    f0 * p0 * f0.transpose() + q0
}

impl EstimatorContext {
    /// Creates a context from an initial state, initial parameters, initial
    /// covariance, and configuration.
    pub fn init(
        x0: RobotState,
        params0: ParamVector,
        p0: StateCovariance,
        config: EstimatorConfig,
        geometry: RobotGeometry,
    ) -> Result<EstimatorContext> {
        config.validate()?;
        let noise = config.noise_config();
        noise.validate()?;
        let core = match config.variant {
            EstimatorVariant::BetaKf | EstimatorVariant::DualBetaKf | EstimatorVariant::Iekf => {
                FilterCore::Beta {
                    mean: x0,
                    prior_cov: p0,
                    prior_ready: false,
                }
            }
            _ => FilterCore::Gaussian(GaussianBelief::new(x0, p0)),
        };
        let param = ParamBelief {
            mean: params0,
            cov: crate::types::ParamCovariance::identity()
                * config.initial.param_std
                * config.initial.param_std,
        };
        Ok(EstimatorContext {
            config,
            noise,
            geometry,
            core,
            param,
            initial_params: params0,
            frame_index: 0,
            last_time: None,
            last_contact: None,
        })
    }

    /// Context with defaults: initial state from ground truth, nominal
    /// parameters, diagonal initial covariance from the config.
    pub fn init_default(
        x0: RobotState,
        config: EstimatorConfig,
        geometry: RobotGeometry,
    ) -> Result<EstimatorContext> {
        let p0 = config.initial.state_covariance();
        let params0 = ParamVector::from_element(config.initial.param_mean);
        EstimatorContext::init(x0, params0, p0, config, geometry)
    }

    /// Current state estimate.
    pub fn state(&self) -> &RobotState {
        match &self.core {
            FilterCore::Gaussian(b) => &b.mean,
            FilterCore::Beta { mean, .. } => mean,
        }
    }

    /// Current calf-length estimate.
    pub fn params(&self) -> ParamVector {
        if self.config.variant.is_dual() {
            self.param.mean
        } else {
            self.initial_params
        }
    }

    /// Current parameter belief (meaningful for dual variants).
    pub fn param_belief(&self) -> &ParamBelief {
        &self.param
    }

    /// Processes one frame given the control input that advanced the state
    /// to this frame's time. Frames must arrive in increasing time order.
    pub fn step(&mut self, frame: &SensorFrame, u: &ControlInput) -> Result<EstimateRecord> {
        if let Some(last) = self.last_time {
            if frame.time <= last {
                return Err(Error::Sequencing(format!(
                    "frame at t={} arrived after t={last}",
                    frame.time
                )));
            }
        }
        self.last_time = Some(frame.time);
        self.frame_index += 1;
        let frame_index = self.frame_index;

        // Parameter filter first (Algorithm step order), dual variants only.
        let mut param_innovation = 0.0;
        if self.config.variant.is_dual() {
            let (next, info) = ukf_param_step(
                &self.param,
                frame,
                &self.geometry,
                &self.noise.param_walk,
                &self.noise.statics_meas,
                &self.config.ut,
            )
            .map_err(|e| e.at_frame(frame_index))?;
            self.param = next;
            param_innovation = info.innovation_norm;
        }
        let pv = self.params();
        let params = LegParams {
            calf_lengths: [pv[0], pv[1], pv[2], pv[3]],
        };
        // Uncertainty of the parameters in use: the tracked belief for dual
        // variants, the configured initial spread for fixed-parameter ones.
        let param_cov = if self.config.variant.is_dual() {
            self.param.cov
        } else {
            crate::types::ParamCovariance::identity()
                * self.config.initial.param_std
                * self.config.initial.param_std
        };

        // Feet that just regained contact are re-anchored to the chain.
        let contact = leg_row_mask(frame);
        let rising = match self.last_contact {
            Some(prev) => std::array::from_fn(|i| contact[i] && !prev[i]),
            None => [false; NUM_LEGS],
        };
        self.last_contact = Some(contact);
        if rising.iter().any(|&r| r) {
            let geometry = self.geometry;
            let sigma = self.noise.measurement;
            match &mut self.core {
                FilterCore::Gaussian(belief) => {
                    let mut mean = belief.mean;
                    reset_touchdown_feet(
                        &mut mean,
                        &mut belief.cov,
                        &rising,
                        frame,
                        &params,
                        &geometry,
                        &sigma,
                    );
                    belief.mean = mean;
                }
                FilterCore::Beta {
                    mean, prior_cov, ..
                } => {
                    reset_touchdown_feet(
                        mean, prior_cov, &rising, frame, &params, &geometry, &sigma,
                    );
                }
            }
        }

        let ctx = StepContext {
            params: &params,
            geometry: &self.geometry,
            noise: &self.noise,
            row_inflation: self.config.row_inflation,
            foot_inflation: self.config.foot_inflation,
            param_cov,
        };

        let mut diagnostics = RecordDiagnostics {
            param_innovation,
            weight_ratio: 1.0,
            ..Default::default()
        };

        match &mut self.core {
            FilterCore::Gaussian(belief) => {
                let (next, info) = match self.config.variant {
                    EstimatorVariant::Qekf | EstimatorVariant::DualQekf => {
                        qekf_step(belief, u, frame, &ctx)
                    }
                    EstimatorVariant::UkfOr => ukf_or_step(
                        belief,
                        u,
                        frame,
                        &ctx,
                        &self.config.ut,
                        self.config.gate_threshold.unwrap_or(f64::INFINITY),
                        self.config.gate_mode,
                    ),
                    _ => unreachable!("prior-recursion variants use the Beta core"),
                }
                .map_err(|e| e.at_frame(frame_index))?;
                *belief = next;
                diagnostics.solver_iterations = info.iterations;
                diagnostics.converged = true;
                diagnostics.gated_legs = info.gated_legs;
                diagnostics.min_covariance_eigenvalue = info.min_covariance_eigenvalue;
            }
            FilterCore::Beta {
                mean,
                prior_cov,
                prior_ready,
            } => {
                let beta_value = self.config.beta.unwrap_or(1e-12);
                if !*prior_ready {
                    // Seed the recursion with the initial linearization.
                    let f0 = process_jacobian(mean, u, &self.noise.gravity);
                    let q0 = process_noise_for_contacts(
                        &mean.orientation,
                        &self.noise.process,
                        &leg_row_mask(frame),
                        self.config.foot_inflation,
                    );
                    *prior_cov = initial_prior(prior_cov, &f0, &q0);
                    *prior_ready = true;
                }
                let prior_mean = propagate(mean, u, &self.noise.gravity)
                    .map_err(|e| e.at_frame(frame_index))?;
                let widened = sigma_with_param_uncertainty(
                    &self.noise.measurement,
                    &prior_mean,
                    frame,
                    &params,
                    &self.geometry,
                    &param_cov,
                );
                let sigma = inflate_covariance(
                    &widened,
                    &leg_row_mask(frame),
                    self.config.row_inflation,
                );
                let (posterior, iterations, converged, weight_ratio) =
                    if self.config.variant == EstimatorVariant::Iekf {
                        let (x, iters) = iekf_mean_update(
                            &prior_mean,
                            prior_cov,
                            &sigma,
                            frame,
                            &ctx,
                            self.config.solver.max_iterations,
                            self.config.solver.step_tolerance,
                        )
                        .map_err(|e| e.at_frame(frame_index))?;
                        (x, iters, true, 1.0)
                    } else {
                        let objective = beta::robot_objective(
                            prior_mean,
                            prior_cov,
                            frame,
                            &params,
                            &self.geometry,
                            &sigma,
                            beta_value,
                        )
                        .map_err(|e| e.at_frame(frame_index))?;
                        let (x, d) = beta::solve(&objective, &self.config.solver)
                            .map_err(|e| e.at_frame(frame_index))?;
                        (x, d.iterations, d.converged, d.weight_ratio)
                    };

                // Prior covariance for the next step, linearized at the
                // posterior estimate.
                let f_t = process_jacobian(&posterior, u, &self.noise.gravity);
                let h_t = measurement_jacobian(&posterior, frame, &params, &self.geometry);
                let q_t = process_noise_for_contacts(
                    &posterior.orientation,
                    &self.noise.process,
                    &leg_row_mask(frame),
                    self.config.foot_inflation,
                );
                let (next_prior, min_eig) = riccati_prior(prior_cov, &f_t, &h_t, &q_t, &sigma)
                    .map_err(|e| e.at_frame(frame_index))?;

                *mean = posterior;
                *prior_cov = next_prior;
                diagnostics.solver_iterations = iterations;
                diagnostics.converged = converged;
                diagnostics.weight_ratio = weight_ratio;
                diagnostics.min_covariance_eigenvalue = min_eig;
            }
        }

        let state = *self.state();
        diagnostics.residual_norm =
            crate::measurement::measure(&state, frame, &params, &self.geometry).norm();
        Ok(EstimateRecord {
            time: frame.time,
            frame_index,
            state,
            params: self.params(),
            diagnostics,
        })
    }

    /// Folds [`EstimatorContext::step`] over a dataset. The first frame
    /// anchors the initial state; every later frame is processed with the
    /// previous frame's IMU sample as the control input.
    pub fn run(&mut self, dataset: &Dataset) -> Result<EstimatorOutput> {
        let mut output = EstimatorOutput::default();
        if dataset.frames.is_empty() {
            return Ok(output);
        }
        let first = &dataset.frames[0];
        self.last_time = Some(first.time);
        self.last_contact = Some(leg_row_mask(first));
        output.records.push(EstimateRecord {
            time: first.time,
            frame_index: 0,
            state: *self.state(),
            params: self.params(),
            diagnostics: RecordDiagnostics::default(),
        });
        for k in 1..dataset.frames.len() {
            let prev = &dataset.frames[k - 1];
            let frame = &dataset.frames[k];
            let dt = frame.time - prev.time;
            if dt <= 0.0 {
                return Err(Error::Sequencing(format!(
                    "non-increasing timestamps at frame {k}: {} after {}",
                    frame.time, prev.time
                )));
            }
            let u = ControlInput {
                accel: prev.accel,
                gyro: prev.gyro,
                dt,
            };
            output.records.push(self.step(frame, &u)?);
        }
        Ok(output)
    }
}

/// Runs one variant over a dataset starting from a ground-truth initial
/// state (the evaluation protocol: initial estimate pinned to truth, biases
/// zero, nominal parameters unless configured otherwise).
pub fn run_variant(
    config: EstimatorConfig,
    dataset: &Dataset,
    x0: RobotState,
    geometry: &RobotGeometry,
) -> Result<EstimatorOutput> {
    let mut ctx = EstimatorContext::init_default(x0, config, *geometry)?;
    ctx.run(dataset)
}
