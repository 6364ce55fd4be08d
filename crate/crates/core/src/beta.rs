//! Robust state filter built on a density-power (β) divergence.
//!
//! Instead of the quadratic measurement loss of the classical MAP filter,
//! the measurement term is
//!
//! ```text
//! l_h(x) = -(β+1) / (β·(2π)^{βm/2}·det(Σ)^{β/2}) · exp(-(β/2)·‖y - h(x)‖²_{Σ⁻¹}) + C_β
//! ```
//!
//! which is bounded: as the residual grows the loss saturates at the
//! x-independent constant `C_β`, so an outlying frame can only push the
//! estimate a bounded amount. As β → 0 the objective reduces to the
//! classical quadratic loss and the filter degenerates into an iterated
//! EKF. The prior term stays quadratic, `½‖x ⊟ f(x̂,u)‖²_{P⁻¹}`, with the
//! prior covariance maintained by the standard Riccati recursion,
//! independent of β.
//!
//! The exponent is negative — the measurement likelihood raised to the
//! power β — and the constant term is the Gaussian-power integral
//! `∫ p(y|x)^{1+β} dy = (1+β)^{-m/2}(2π)^{-βm/2}det(Σ)^{-β/2}`.

use nalgebra::{DMatrix, DVector, SMatrix};

use crate::error::{Error, Result};
use crate::kinematics::{LegParams, RobotGeometry};
use crate::measurement::{measure, measurement_jacobian};
use crate::types::{
    blocks, floor_eigenvalues, so3_right_jacobian_inv, ErrorVector, MeasCovariance, RobotState,
    SensorFrame, StateCovariance, MEAS_DIM, TANGENT_DIM,
};

/// Iteration controls for the damped Gauss-Newton solver.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// Maximum outer iterations.
    pub max_iterations: usize,
    /// Terminate when the gradient norm drops below this.
    pub gradient_tolerance: f64,
    /// Terminate when the accepted step norm drops below this.
    pub step_tolerance: f64,
    /// Initial Levenberg damping.
    pub damping_init: f64,
    /// Multiplicative damping adjustment on rejected/accepted steps.
    pub damping_scale: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 50,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            damping_init: 1e-6,
            damping_scale: 10.0,
        }
    }
}

impl SolverSettings {
    /// Validates positivity of every control.
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || !(self.gradient_tolerance > 0.0)
            || !(self.step_tolerance > 0.0)
            || !(self.damping_init > 0.0)
            || !(self.damping_scale > 1.0)
        {
            return Err(Error::InvalidArgument(
                "solver settings must be positive (damping scale > 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Problem geometry the robust MAP solver needs: a residual with its
/// Jacobian, and a (possibly manifold-valued) prior chart.
pub trait MapProblem {
    /// Optimization variable.
    type Point: Clone;

    /// Dimension of the tangent space.
    fn tangent_dim(&self) -> usize;
    /// Residual `h(x) - y` at a point.
    fn residual(&self, x: &Self::Point) -> DVector<f64>;
    /// Jacobian of the residual with respect to the tangent perturbation.
    fn residual_jacobian(&self, x: &Self::Point) -> DMatrix<f64>;
    /// Tangent coordinates of `x` in the chart centered at the prior mean.
    fn prior_offset(&self, x: &Self::Point) -> DVector<f64>;
    /// Jacobian of [`MapProblem::prior_offset`] with respect to a tangent
    /// perturbation at `x`; identity for Euclidean problems.
    fn prior_chart_jacobian(&self, x: &Self::Point) -> DMatrix<f64>;
    /// Applies a tangent step at `x`.
    fn retract(&self, x: &Self::Point, step: &DVector<f64>) -> Self::Point;
    /// The prior mean as a point (the solver's starting iterate).
    fn prior_mean_point(&self) -> Self::Point;
}

/// Frozen per-step inputs of the robust MAP objective.
pub struct BetaObjective<P: MapProblem> {
    /// Problem geometry (residual, prior chart).
    pub problem: P,
    sigma_inv: DMatrix<f64>,
    ln_det_sigma: f64,
    prior_info: DMatrix<f64>,
    beta: f64,
    meas_dim: usize,
    /// ln[(2π)^{βm/2} det(Σ)^{β/2}]
    ln_scale: f64,
}

impl<P: MapProblem> BetaObjective<P> {
    /// Builds the objective from the measurement covariance Σ, prior
    /// covariance P, and β.
    pub fn new(problem: P, sigma: DMatrix<f64>, prior_cov: DMatrix<f64>, beta: f64) -> Result<Self> {
        let m = sigma.nrows();
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta must lie in (0, 1), got {beta}"
            )));
        }
        let sigma_chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical("measurement covariance not SPD"))?;
        let ln_det_sigma = 2.0 * sigma_chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let sigma_inv = sigma_chol.solve(&DMatrix::identity(m, m));
        let n = prior_cov.nrows();
        let prior_info = prior_cov
            .cholesky()
            .ok_or_else(|| Error::numerical("prior covariance not SPD"))?
            .solve(&DMatrix::identity(n, n));
        let ln_scale =
            beta * (m as f64) / 2.0 * (2.0 * std::f64::consts::PI).ln() + beta / 2.0 * ln_det_sigma;
        Ok(BetaObjective {
            problem,
            sigma_inv,
            ln_det_sigma,
            prior_info,
            beta,
            meas_dim: m,
            ln_scale,
        })
    }

    /// Squared Mahalanobis residual `‖y - h(x)‖²_{Σ⁻¹}`.
    pub fn squared_residual(&self, x: &P::Point) -> f64 {
        let r = self.problem.residual(x);
        (r.transpose() * &self.sigma_inv * r)[(0, 0)]
    }

    /// The x-independent integral term `∫ p(y|x)^{1+β} dy`.
    pub fn constant_term(&self) -> f64 {
        ((1.0 + self.beta).ln() * -(self.meas_dim as f64) / 2.0 - self.ln_scale).exp()
    }

    /// Peak magnitude of the measurement loss:
    /// `(β+1)/(β(2π)^{βm/2}det(Σ)^{β/2})`.
    pub fn amplitude(&self) -> f64 {
        (1.0 + self.beta) / self.beta * (-self.ln_scale).exp()
    }

    /// Prior loss `½‖x ⊟ prior‖²_{P⁻¹}`.
    pub fn prior_loss(&self, x: &P::Point) -> f64 {
        let e = self.problem.prior_offset(x);
        0.5 * (e.transpose() * &self.prior_info * e)[(0, 0)]
    }

    /// Full objective value `l_h(x) + l_f(x)`, constant term included.
    pub fn loss(&self, x: &P::Point) -> f64 {
        let s = self.squared_residual(x);
        let l_h = -self.amplitude() * (-self.beta / 2.0 * s).exp() + self.constant_term();
        l_h + self.prior_loss(x)
    }

    /// Objective shifted by its x-independent floor so that the minimum of
    /// the measurement term is 0. Stable for β → 0 and used for descent
    /// checks; differs from [`BetaObjective::loss`] by a constant.
    pub fn shifted_loss(&self, x: &P::Point) -> f64 {
        let s = self.squared_residual(x);
        // A·(1 - exp(-βs/2)) evaluated via expm1 to survive tiny β.
        let saturating = -self.amplitude() * (-self.beta / 2.0 * s).exp_m1();
        saturating + self.prior_loss(x)
    }

    /// Gradient weight `w(x) = (β+1)·exp(-βs/2) / ((2π)^{βm/2}det(Σ)^{β/2})`.
    pub fn weight(&self, x: &P::Point) -> f64 {
        let s = self.squared_residual(x);
        (1.0 + self.beta) * (-self.ln_scale - self.beta / 2.0 * s).exp()
    }

    /// Ratio of the gradient weight to its zero-residual maximum, in (0, 1].
    pub fn weight_ratio(&self, x: &P::Point) -> f64 {
        (-self.beta / 2.0 * self.squared_residual(x)).exp()
    }

    /// Analytic gradient and Gauss-Newton Hessian approximation over the
    /// tangent space at `x`.
    ///
    /// The Hessian keeps `w·HᵀΣ⁻¹H + DᵀP⁻¹D` and drops the rank-one
    /// curvature of the weight itself; damping in the solver covers the gap.
    pub fn gradient_hessian(&self, x: &P::Point) -> (DVector<f64>, DMatrix<f64>) {
        let r = self.problem.residual(x);
        let h = self.problem.residual_jacobian(x);
        let e = self.problem.prior_offset(x);
        let d = self.problem.prior_chart_jacobian(x);
        let w = self.weight(x);

        let sig_r = &self.sigma_inv * &r;
        let info_e = &self.prior_info * &e;
        let grad = w * h.transpose() * sig_r + d.transpose() * &info_e;
        let hess = w * h.transpose() * &self.sigma_inv * &h
            + d.transpose() * &self.prior_info * &d;
        (grad, hess)
    }

    /// β in use.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// ln det Σ, for logging.
    pub fn ln_det_sigma(&self) -> f64 {
        self.ln_det_sigma
    }
}

/// Solver outcome details.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveDiagnostics {
    /// Outer iterations performed.
    pub iterations: usize,
    /// Gradient norm at the returned iterate.
    pub gradient_norm: f64,
    /// `w(x)/w_max` at the returned iterate.
    pub weight_ratio: f64,
    /// Whether a tolerance was met within the iteration budget.
    pub converged: bool,
    /// Shifted objective value after every accepted iterate (monotone
    /// non-increasing by construction).
    pub loss_trace: Vec<f64>,
}

/// Minimizes the objective by damped Gauss-Newton in the tangent space,
/// starting from the prior mean. Returns the best iterate even when the
/// iteration budget runs out (flagged in the diagnostics).
pub fn solve<P: MapProblem>(
    objective: &BetaObjective<P>,
    settings: &SolverSettings,
) -> Result<(P::Point, SolveDiagnostics)> {
    settings.validate()?;
    let n = objective.problem.tangent_dim();
    let mut x = objective.problem.prior_mean_point();
    let mut current_loss = objective.shifted_loss(&x);
    let mut damping = settings.damping_init;
    let mut trace = vec![current_loss];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iterations {
        iterations += 1;
        let (grad, hess) = objective.gradient_hessian(&x);
        if grad.norm() < settings.gradient_tolerance {
            converged = true;
            break;
        }

        // Levenberg loop: inflate damping until the step descends.
        let mut accepted = false;
        for _ in 0..24 {
            let mut system = hess.clone();
            for k in 0..n {
                system[(k, k)] += damping;
            }
            let step = match system.cholesky() {
                Some(chol) => chol.solve(&(-&grad)),
                None => {
                    damping *= settings.damping_scale;
                    continue;
                }
            };
            let trial = objective.problem.retract(&x, &step);
            let trial_loss = objective.shifted_loss(&trial);
            if trial_loss <= current_loss {
                let step_norm = step.norm();
                x = trial;
                current_loss = trial_loss;
                trace.push(current_loss);
                damping = (damping / settings.damping_scale).max(1e-12);
                accepted = true;
                if step_norm < settings.step_tolerance {
                    converged = true;
                }
                break;
            }
            damping *= settings.damping_scale;
        }
        // Stop on a met tolerance, or when no damping produced descent.
        if converged || !accepted {
            break;
        }
    }

    let (grad, _) = objective.gradient_hessian(&x);
    let diagnostics = SolveDiagnostics {
        iterations,
        gradient_norm: grad.norm(),
        weight_ratio: objective.weight_ratio(&x),
        converged: converged || grad.norm() < settings.gradient_tolerance,
        loss_trace: trace,
    };
    Ok((x, diagnostics))
}

/// Riccati recursion for the prior covariance:
/// `P⁺ = Q + FPFᵀ - FPHᵀ(HPHᵀ + Σ)⁻¹HPFᵀ`, symmetrized and
/// eigenvalue-floored. Returns the result and the minimum eigenvalue seen
/// before flooring.
pub fn riccati_prior<const N: usize, const M: usize>(
    p: &SMatrix<f64, N, N>,
    f: &SMatrix<f64, N, N>,
    h: &SMatrix<f64, M, N>,
    q: &SMatrix<f64, N, N>,
    sigma: &SMatrix<f64, M, M>,
) -> Result<(SMatrix<f64, N, N>, f64)> {
    let fp = f * p;
    let s = h * p * h.transpose() + sigma;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::numerical("Riccati inner matrix not invertible"))?;
    // (HPFᵀ) solved against S, then folded back.
    let hpft = h * p * f.transpose();
    let solved = chol.solve(&hpft);
    let mut next = q + &fp * f.transpose() - hpft.transpose() * solved;
    let min_eig = floor_eigenvalues(&mut next, crate::filters::COVARIANCE_EIGEN_FLOOR);
    Ok((next, min_eig))
}

/// The robot-state instantiation of [`MapProblem`]: residual from the leg
/// measurement model, prior chart from the tangent-space retraction.
pub struct RobotProblem<'a> {
    /// Prior mean `f(x̂_{t-1}, u_{t-1})`.
    pub prior_mean: RobotState,
    /// Sensor frame at time t.
    pub frame: &'a SensorFrame,
    /// Leg parameters the measurement model is evaluated at.
    pub params: &'a LegParams,
    /// Fixed geometry.
    pub geometry: &'a RobotGeometry,
}

impl MapProblem for RobotProblem<'_> {
    type Point = RobotState;

    fn tangent_dim(&self) -> usize {
        TANGENT_DIM
    }

    fn residual(&self, x: &RobotState) -> DVector<f64> {
        let y = measure(x, self.frame, self.params, self.geometry);
        DVector::from_iterator(MEAS_DIM, y.iter().copied())
    }

    fn residual_jacobian(&self, x: &RobotState) -> DMatrix<f64> {
        let h = measurement_jacobian(x, self.frame, self.params, self.geometry);
        DMatrix::from_iterator(MEAS_DIM, TANGENT_DIM, h.iter().copied())
    }

    fn prior_offset(&self, x: &RobotState) -> DVector<f64> {
        let e = self.prior_mean.local(x);
        DVector::from_iterator(TANGENT_DIM, e.iter().copied())
    }

    fn prior_chart_jacobian(&self, x: &RobotState) -> DMatrix<f64> {
        // Identity except the orientation block, whose chart derivative is
        // the inverse right Jacobian at the current rotation offset.
        let mut d = DMatrix::identity(TANGENT_DIM, TANGENT_DIM);
        let e = self.prior_mean.local(x);
        let e_theta = nalgebra::Vector3::new(
            e[blocks::DTHETA],
            e[blocks::DTHETA + 1],
            e[blocks::DTHETA + 2],
        );
        let jr_inv = so3_right_jacobian_inv(&e_theta);
        for r in 0..3 {
            for c in 0..3 {
                d[(blocks::DTHETA + r, blocks::DTHETA + c)] = jr_inv[(r, c)];
            }
        }
        d
    }

    fn retract(&self, x: &RobotState, step: &DVector<f64>) -> RobotState {
        let mut delta = ErrorVector::zeros();
        for k in 0..TANGENT_DIM {
            delta[k] = step[k];
        }
        x.retract(&delta)
    }

    fn prior_mean_point(&self) -> RobotState {
        self.prior_mean
    }
}

/// Convenience constructor for the robot-state objective.
pub fn robot_objective<'a>(
    prior_mean: RobotState,
    prior_cov: &StateCovariance,
    frame: &'a SensorFrame,
    params: &'a LegParams,
    geometry: &'a RobotGeometry,
    sigma: &MeasCovariance,
    beta: f64,
) -> Result<BetaObjective<RobotProblem<'a>>> {
    BetaObjective::new(
        RobotProblem {
            prior_mean,
            frame,
            params,
            geometry,
        },
        DMatrix::from_iterator(MEAS_DIM, MEAS_DIM, sigma.iter().copied()),
        DMatrix::from_iterator(TANGENT_DIM, TANGENT_DIM, prior_cov.iter().copied()),
        beta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{LegSensors, NoiseConfig, Quat, RobotState};
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// One-dimensional Euclidean instance: h(x) = x against a scalar
    /// observation, quadratic prior.
    struct ScalarProblem {
        prior: f64,
        observed: f64,
    }

    impl MapProblem for ScalarProblem {
        type Point = f64;

        fn tangent_dim(&self) -> usize {
            1
        }
        fn residual(&self, x: &f64) -> DVector<f64> {
            DVector::from_element(1, x - self.observed)
        }
        fn residual_jacobian(&self, _x: &f64) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 1.0)
        }
        fn prior_offset(&self, x: &f64) -> DVector<f64> {
            DVector::from_element(1, x - self.prior)
        }
        fn prior_chart_jacobian(&self, _x: &f64) -> DMatrix<f64> {
            DMatrix::identity(1, 1)
        }
        fn retract(&self, x: &f64, step: &DVector<f64>) -> f64 {
            x + step[0]
        }
        fn prior_mean_point(&self) -> f64 {
            self.prior
        }
    }

    fn scalar_objective(observed: f64, beta: f64) -> BetaObjective<ScalarProblem> {
        BetaObjective::new(
            ScalarProblem {
                prior: 0.0,
                observed,
            },
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            beta,
        )
        .unwrap()
    }

    #[test]
    fn loss_floor_at_zero_residual() {
        let obj = scalar_objective(0.0, 0.3);
        // At x = prior = observed both terms sit at their floors.
        let x = 0.0;
        assert_abs_diff_eq!(obj.prior_loss(&x), 0.0);
        let expected_floor = -obj.amplitude() + obj.constant_term();
        assert_abs_diff_eq!(obj.loss(&x), expected_floor, epsilon = 1e-12);
        // And the closed forms themselves.
        let m = 1.0;
        let beta = 0.3;
        let c = (2.0 * std::f64::consts::PI).powf(beta * m / 2.0); // det Σ = 1
        assert_abs_diff_eq!(obj.amplitude(), (beta + 1.0) / (beta * c), epsilon = 1e-12);
        assert_abs_diff_eq!(
            obj.constant_term(),
            (1.0 + beta).powf(-m / 2.0) / c,
            epsilon = 1e-12
        );
    }

    #[test]
    fn loss_saturates_for_huge_residuals() {
        // Huge residual at the prior mean: the measurement term collapses to
        // its x-independent constant.
        let obj = scalar_objective(1e6, 0.3);
        let at_prior = 0.0;
        assert_abs_diff_eq!(obj.prior_loss(&at_prior), 0.0);
        assert_abs_diff_eq!(obj.loss(&at_prior), obj.constant_term(), epsilon = 1e-12);
    }

    #[test]
    fn boundedness_of_measurement_loss() {
        let obj = scalar_objective(1.0, 0.2);
        let bound = obj.amplitude();
        let mut worst: f64 = 0.0;
        for k in -2000..=2000 {
            let x = k as f64 * 0.01;
            let l_h = obj.loss(&x) - obj.prior_loss(&x) - obj.constant_term();
            worst = worst.max(l_h.abs());
            assert!(l_h.abs() <= bound + 1e-12);
        }
        // The bound is attained at zero residual.
        assert_abs_diff_eq!(worst, bound, epsilon = 1e-9);
    }

    #[test]
    fn weight_monotone_in_residual() {
        let obj = scalar_objective(0.0, 0.15);
        let mut last = f64::INFINITY;
        for k in 0..200 {
            let x = k as f64 * 0.05;
            let w = obj.weight(&x);
            assert!(w < last || k == 0, "weight not strictly decreasing at {x}");
            last = w;
        }
    }

    #[test]
    fn weight_ratio_examples() {
        // Mahalanobis residual 10 (squared 100).
        let s = 100.0_f64;
        let ratio = |beta: f64| (-beta / 2.0 * s).exp();
        assert_abs_diff_eq!(ratio(1e-3), (-0.05f64).exp(), epsilon = 1e-15);
        assert!((ratio(1e-3) - 0.951).abs() < 1e-3);
        assert!((ratio(0.5) - 1.4e-11).abs() < 1e-12);
        assert!(ratio(0.5) < ratio(1e-3));
    }

    #[test]
    fn solver_matches_dense_grid_search() {
        let beta = 0.3;
        let obj = scalar_objective(1.5, beta);
        // Independent oracle: dense grid over [-10, 10] at 1e-4 resolution.
        let mut best_x = -10.0;
        let mut best_loss = f64::INFINITY;
        let steps = 200_000;
        for k in 0..=steps {
            let x = -10.0 + 20.0 * k as f64 / steps as f64;
            let l = obj.loss(&x);
            if l < best_loss {
                best_loss = l;
                best_x = x;
            }
        }
        let (solved, diag) = solve(&obj, &SolverSettings::default()).unwrap();
        assert!(diag.converged);
        assert!(
            (solved - best_x).abs() < 1e-3,
            "solver {solved} vs grid {best_x}"
        );
    }

    #[test]
    fn solver_descends_monotonically() {
        let obj = scalar_objective(4.0, 0.4);
        let (_, diag) = solve(&obj, &SolverSettings::default()).unwrap();
        for pair in diag.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15, "loss increased: {pair:?}");
        }
    }

    #[test]
    fn zero_residual_converges_immediately() {
        let obj = scalar_objective(0.0, 0.2);
        let (solved, diag) = solve(&obj, &SolverSettings::default()).unwrap();
        assert!(diag.converged);
        assert!(diag.iterations <= 2);
        assert_abs_diff_eq!(solved, 0.0, epsilon = 1e-12);
    }

    fn random_robot_setup(
        rng: &mut ChaCha12Rng,
    ) -> (RobotState, SensorFrame, LegParams, RobotGeometry) {
        let geometry = RobotGeometry::default();
        let params = LegParams::uniform(rng.gen_range(0.2..0.25));
        let mut x = RobotState::zeroed();
        x.position = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.31);
        x.velocity = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 0.0);
        x.orientation = Quat::exp(&Vector3::new(
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.5..0.5),
        ))
        .unwrap();
        let rot = x.orientation.rotation_matrix();
        let mut legs = [LegSensors::zeroed(); 4];
        for (i, leg) in legs.iter_mut().enumerate() {
            let phi = Vector3::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(0.4..0.9),
                rng.gen_range(-1.6..-0.9),
            );
            leg.joint_angles = phi;
            leg.joint_velocities = Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            leg.contact = true;
            leg.normal_force = 35.0;
            let foot = crate::kinematics::fk(&phi, &geometry.legs[i], params.calf_lengths[i]);
            // Near-consistent foot with a small offset so residuals are
            // moderate rather than zero.
            x.foot_positions[i] = x.position
                + rot * foot
                + Vector3::new(
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                );
        }
        let frame = SensorFrame {
            time: 0.0,
            gyro: Vector3::new(
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            ),
            accel: Vector3::new(0.0, 0.0, 9.81),
            legs,
        };
        (x, frame, params, geometry)
    }

    #[test]
    fn robot_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(50);
        let noise = NoiseConfig::default();
        for trial in 0..100 {
            let (prior, frame, params, geometry) = random_robot_setup(&mut rng);
            let prior_cov = StateCovariance::identity() * 1e-2;
            let obj = robot_objective(
                prior,
                &prior_cov,
                &frame,
                &params,
                &geometry,
                &noise.measurement,
                0.05,
            )
            .unwrap();
            // Evaluate away from the prior mean so the chart term matters.
            let mut offset = DVector::zeros(TANGENT_DIM);
            for k in 0..TANGENT_DIM {
                offset[k] = rng.gen_range(-0.05..0.05);
            }
            let x = obj.problem.retract(&prior, &offset);

            let (grad, _) = obj.gradient_hessian(&x);
            let h = 1e-6;
            let mut fd = DVector::zeros(TANGENT_DIM);
            for k in 0..TANGENT_DIM {
                let mut e = DVector::zeros(TANGENT_DIM);
                e[k] = h;
                let plus = obj.loss(&obj.problem.retract(&x, &e));
                e[k] = -h;
                let minus = obj.loss(&obj.problem.retract(&x, &e));
                fd[k] = (plus - minus) / (2.0 * h);
            }
            let rel = (&fd - &grad).norm() / grad.norm();
            assert!(rel < 1e-5, "trial {trial}: gradient FD mismatch {rel}");
        }
    }

    #[test]
    fn riccati_scalar_fixed_point() {
        let q = 0.01;
        let r = 0.04;
        let f = SMatrix::<f64, 1, 1>::identity();
        let h = SMatrix::<f64, 1, 1>::identity();
        let qm = SMatrix::<f64, 1, 1>::from_element(q);
        let rm = SMatrix::<f64, 1, 1>::from_element(r);
        let mut p = SMatrix::<f64, 1, 1>::from_element(1.0);
        for _ in 0..10_000 {
            p = riccati_prior(&p, &f, &h, &qm, &rm).unwrap().0;
        }
        let expected = (q + (q * q + 4.0 * q * r).sqrt()) / 2.0;
        assert_abs_diff_eq!(p[(0, 0)], expected, epsilon = 1e-10);
    }

    #[test]
    fn riccati_outputs_remain_spd() {
        let mut rng = ChaCha12Rng::seed_from_u64(51);
        for _ in 0..1000 {
            let a = SMatrix::<f64, 5, 5>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let p = a * a.transpose() + SMatrix::<f64, 5, 5>::identity() * 0.1;
            let f = SMatrix::<f64, 5, 5>::from_fn(|_, _| rng.gen_range(-0.5..0.5));
            let h = SMatrix::<f64, 3, 5>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let q = SMatrix::<f64, 5, 5>::identity() * 0.01;
            let sigma = SMatrix::<f64, 3, 3>::identity() * 0.5;
            let (next, _) = riccati_prior(&p, &f, &h, &q, &sigma).unwrap();
            assert!((next - next.transpose()).abs().max() < 1e-12);
            assert!(next.symmetric_eigen().eigenvalues.min() >= 1e-13);
        }
    }

    #[test]
    fn riccati_invariant_under_symmetrization_noise() {
        let mut rng = ChaCha12Rng::seed_from_u64(52);
        let a = SMatrix::<f64, 4, 4>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let p = a * a.transpose() + SMatrix::<f64, 4, 4>::identity() * 0.2;
        let f = SMatrix::<f64, 4, 4>::identity() * 0.9;
        let h = SMatrix::<f64, 2, 4>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let q = SMatrix::<f64, 4, 4>::identity() * 0.05;
        let sigma = SMatrix::<f64, 2, 2>::identity();
        let (clean, _) = riccati_prior(&p, &f, &h, &q, &sigma).unwrap();
        let mut noisy = p;
        noisy[(0, 1)] += 1e-13;
        let (perturbed, _) = riccati_prior(&noisy, &f, &h, &q, &sigma).unwrap();
        assert!((clean - perturbed).abs().max() < 1e-11);
    }

    #[test]
    fn riccati_fully_inflated_measurement_is_predict_only() {
        let mut rng = ChaCha12Rng::seed_from_u64(53);
        let a = SMatrix::<f64, 4, 4>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let p = a * a.transpose() + SMatrix::<f64, 4, 4>::identity() * 0.2;
        let f = SMatrix::<f64, 4, 4>::identity() * 0.95;
        let h = SMatrix::<f64, 2, 4>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let q = SMatrix::<f64, 4, 4>::identity() * 0.05;
        let sigma = SMatrix::<f64, 2, 2>::identity() * 1e12;
        let (next, _) = riccati_prior(&p, &f, &h, &q, &sigma).unwrap();
        let predict_only = q + f * p * f.transpose();
        assert!((next - predict_only).abs().max() < 1e-9);
    }
}
