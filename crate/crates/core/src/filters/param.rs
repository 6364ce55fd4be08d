//! Statics-based parameter filter: a UKF over the per-leg calf lengths.
//!
//! The measurement is the stacked normal contact force of the legs in
//! stance, predicted from joint torques through the inverse-transpose leg
//! Jacobian. Nothing in this module can see the robot-state belief: the
//! update consumes sensor data only, which is what keeps state-estimation
//! errors out of the parameter estimate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kinematics::{
    condition_number, jacobian, statics_normal_force, LegParams, RobotGeometry,
    SINGULARITY_CONDITION_LIMIT,
};
use crate::types::{ParamCovariance, ParamVector, SensorFrame, NUM_LEGS};

use super::sigma::{psd_sqrt, UtParams};

/// Gaussian belief over the calf-length parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBelief {
    /// Mean calf lengths (m).
    pub mean: ParamVector,
    /// Parameter covariance.
    pub cov: ParamCovariance,
}

impl ParamBelief {
    /// Belief with identical mean and variance on every leg.
    pub fn uniform(l_c: f64, variance: f64) -> ParamBelief {
        ParamBelief {
            mean: ParamVector::from_element(l_c),
            cov: ParamCovariance::identity() * variance,
        }
    }

    /// Mean as [`LegParams`].
    pub fn params(&self) -> LegParams {
        LegParams {
            calf_lengths: [self.mean[0], self.mean[1], self.mean[2], self.mean[3]],
        }
    }
}

/// Outcome details of one parameter-filter step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStepInfo {
    /// Legs that contributed a statics measurement this frame.
    pub measured_legs: [bool; NUM_LEGS],
    /// Innovation norm of the statics update (N), zero on predict-only steps.
    pub innovation_norm: f64,
}

/// One predict(+update) step of the parameter UKF.
///
/// Predict adds the random-walk covariance; the update runs only over legs
/// that are in contact and whose Jacobian at the current mean is well
/// conditioned. With no usable leg the step is predict-only.
pub fn ukf_param_step(
    belief: &ParamBelief,
    frame: &SensorFrame,
    geometry: &RobotGeometry,
    walk_cov: &ParamCovariance,
    statics_cov: &ParamCovariance,
    ut: &UtParams,
) -> Result<(ParamBelief, ParamStepInfo)> {
    // Random-walk predict.
    let mean = belief.mean;
    let mut cov = belief.cov + walk_cov;
    crate::types::symmetrize(&mut cov);

    // Select usable legs at the predicted mean.
    let mut legs: Vec<usize> = (0..NUM_LEGS)
        .filter(|&i| {
            let leg = &frame.legs[i];
            leg.contact
                && condition_number(&jacobian(
                    &leg.joint_angles,
                    &geometry.legs[i],
                    mean[i],
                )) < SINGULARITY_CONDITION_LIMIT
        })
        .collect();

    loop {
        if legs.is_empty() {
            return Ok((
                ParamBelief { mean, cov },
                ParamStepInfo::default(),
            ));
        }
        match try_update(&mean, &cov, frame, geometry, statics_cov, ut, &legs) {
            Ok((updated, info)) => return Ok((updated, info)),
            Err(Error::SingularConfiguration(_)) => {
                // A sigma point strayed into a singular configuration; drop
                // the most ill-conditioned leg and retry.
                let worst = legs
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        let ca = condition_number(&jacobian(
                            &frame.legs[a].joint_angles,
                            &geometry.legs[a],
                            mean[a],
                        ));
                        let cb = condition_number(&jacobian(
                            &frame.legs[b].joint_angles,
                            &geometry.legs[b],
                            mean[b],
                        ));
                        ca.total_cmp(&cb)
                    })
                    .unwrap();
                legs.retain(|&l| l != worst);
            }
            Err(e) => return Err(e),
        }
    }
}

fn try_update(
    mean: &ParamVector,
    cov: &ParamCovariance,
    frame: &SensorFrame,
    geometry: &RobotGeometry,
    statics_cov: &ParamCovariance,
    ut: &UtParams,
    legs: &[usize],
) -> Result<(ParamBelief, ParamStepInfo)> {
    let n = NUM_LEGS;
    let m = legs.len();
    let lambda = ut.lambda(n);
    let (w_mean, w_cov) = ut.weights(n);

    let cov_dyn = DMatrix::from_iterator(n, n, cov.iter().copied());
    let root = psd_sqrt(&(cov_dyn * (n as f64 + lambda)));

    // 2n+1 sigma points in parameter space.
    let mut points: Vec<ParamVector> = Vec::with_capacity(2 * n + 1);
    points.push(*mean);
    for j in 0..n {
        let mut d = ParamVector::zeros();
        for k in 0..n {
            d[k] = root[(k, j)];
        }
        points.push(mean + d);
    }
    for j in 0..n {
        let mut d = ParamVector::zeros();
        for k in 0..n {
            d[k] = root[(k, j)];
        }
        points.push(mean - d);
    }

    // Predicted normal force per selected leg, per sigma point.
    let mut z_points: Vec<DVector<f64>> = Vec::with_capacity(points.len());
    for p in &points {
        let mut z = DVector::zeros(m);
        for (row, &leg) in legs.iter().enumerate() {
            let sensors = &frame.legs[leg];
            z[row] = statics_normal_force(
                &sensors.joint_angles,
                &geometry.legs[leg],
                p[leg],
                &sensors.joint_torques,
            )?;
        }
        z_points.push(z);
    }

    let mut z_mean = DVector::zeros(m);
    for (w, z) in w_mean.iter().zip(z_points.iter()) {
        z_mean += *w * z;
    }
    let mut s = DMatrix::zeros(m, m);
    let mut cross = DMatrix::zeros(n, m);
    for ((w, z), p) in w_cov.iter().zip(z_points.iter()).zip(points.iter()) {
        let dz = z - &z_mean;
        let dp = p - mean;
        s += *w * &dz * dz.transpose();
        for r in 0..n {
            for c in 0..m {
                cross[(r, c)] += *w * dp[r] * dz[c];
            }
        }
    }
    for (row, &leg) in legs.iter().enumerate() {
        s[(row, row)] += statics_cov[(leg, leg)];
    }

    let measured = DVector::from_iterator(m, legs.iter().map(|&l| frame.legs[l].normal_force));
    let innovation = measured - z_mean;

    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("statics innovation covariance not invertible"))?;
    let gain = chol.solve(&cross.transpose()).transpose();

    let corr = &gain * &innovation;
    let mut new_mean = *mean;
    for k in 0..n {
        new_mean[k] += corr[k];
    }
    let reduction = &gain * &s * gain.transpose();
    let mut new_cov = *cov;
    for r in 0..n {
        for c in 0..n {
            new_cov[(r, c)] -= reduction[(r, c)];
        }
    }
    let min_floor = crate::filters::COVARIANCE_EIGEN_FLOOR;
    crate::types::floor_eigenvalues(&mut new_cov, min_floor);

    let mut measured_legs = [false; NUM_LEGS];
    for &leg in legs {
        measured_legs[leg] = true;
    }
    Ok((
        ParamBelief {
            mean: new_mean,
            cov: new_cov,
        },
        ParamStepInfo {
            measured_legs,
            innovation_norm: innovation.norm(),
        },
    ))
}
