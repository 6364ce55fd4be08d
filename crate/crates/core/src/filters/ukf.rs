//! Unscented state filter with Mahalanobis-distance outlier rejection.

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{
    inflate_covariance, leg_row_mask, measure, pos_row, vel_row,
};
use crate::process::{propagate, ControlInput};
use crate::types::{
    floor_eigenvalues, symmetrize, ErrorVector, MeasCovariance, MeasVector, SensorFrame,
    StateCovariance, MEAS_DIM, NUM_LEGS, TANGENT_DIM,
};

use super::qekf::StepContext;
use super::sigma::{SigmaPoints, UtParams};
use super::{GaussianBelief, StepDiagnostics, COVARIANCE_EIGEN_FLOOR};

/// Innovation-gating granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GateMode {
    /// Gate each leg's 6 rows on its own 6-dof Mahalanobis distance.
    #[default]
    PerLeg,
    /// Gate the whole 6N innovation at once.
    FullVector,
}

/// Plain unscented step (no gating); equivalent to [`ukf_or_step`] with an
/// infinite threshold.
pub fn ukf_step(
    belief: &GaussianBelief,
    u: &ControlInput,
    frame: &SensorFrame,
    ctx: &StepContext,
    ut: &UtParams,
) -> Result<(GaussianBelief, StepDiagnostics)> {
    ukf_update(belief, u, frame, ctx, ut, None, GateMode::PerLeg)
}

/// Unscented step with Mahalanobis outlier rejection: legs whose innovation
/// distance exceeds `threshold` have their rows covariance-inflated for this
/// step's update.
pub fn ukf_or_step(
    belief: &GaussianBelief,
    u: &ControlInput,
    frame: &SensorFrame,
    ctx: &StepContext,
    ut: &UtParams,
    threshold: f64,
    mode: GateMode,
) -> Result<(GaussianBelief, StepDiagnostics)> {
    if !(threshold > 0.0) {
        // A zero gate degenerates to rejecting every measurement.
        let all_gated = [true; NUM_LEGS];
        return ukf_update(belief, u, frame, ctx, ut, Some((0.0, all_gated)), mode)
            .map(|(b, mut d)| {
                d.gated_legs = all_gated;
                (b, d)
            });
    }
    ukf_update(belief, u, frame, ctx, ut, Some((threshold, [false; NUM_LEGS])), mode)
}

fn ukf_update(
    belief: &GaussianBelief,
    u: &ControlInput,
    frame: &SensorFrame,
    ctx: &StepContext,
    ut: &UtParams,
    gate: Option<(f64, [bool; NUM_LEGS])>,
    mode: GateMode,
) -> Result<(GaussianBelief, StepDiagnostics)> {
    // Unscented predict.
    let points = SigmaPoints::draw(&belief.mean, &belief.cov, ut);
    let propagated: Vec<_> = points
        .states
        .iter()
        .map(|x| propagate(x, u, &ctx.noise.gravity))
        .collect::<Result<_>>()?;
    let pred_points = SigmaPoints {
        states: propagated,
        w_mean: points.w_mean.clone(),
        w_cov: points.w_cov.clone(),
    };
    let pred_mean = pred_points.mean();
    let mut p_pred = pred_points.covariance_about(&pred_mean)
        + ctx.process_noise(&belief.mean.orientation, frame);
    symmetrize(&mut p_pred);

    // Redraw sigma points from the predicted belief for the update.
    let upd_points = SigmaPoints::draw(&pred_mean, &p_pred, ut);
    let meas: Vec<MeasVector> = upd_points
        .states
        .iter()
        .map(|x| measure(x, frame, ctx.params, ctx.geometry))
        .collect();
    let mut y_mean = MeasVector::zeros();
    for (w, y) in upd_points.w_mean.iter().zip(meas.iter()) {
        y_mean += *w * y;
    }
    // Measurement spread and state-measurement cross covariance.
    let mut spread = MeasCovariance::zeros();
    let mut cross = SMatrix::<f64, TANGENT_DIM, MEAS_DIM>::zeros();
    for ((w, y), x) in upd_points
        .w_cov
        .iter()
        .zip(meas.iter())
        .zip(upd_points.states.iter())
    {
        let dy = y - y_mean;
        let dx: ErrorVector = pred_mean.local(x);
        spread += *w * dy * dy.transpose();
        cross += *w * dx * dy.transpose();
    }

    let contact_mask = leg_row_mask(frame);
    let widened = crate::measurement::sigma_with_param_uncertainty(
        &ctx.noise.measurement,
        &pred_mean,
        frame,
        ctx.params,
        ctx.geometry,
        &ctx.param_cov,
    );
    let base_sigma = inflate_covariance(&widened, &contact_mask, ctx.row_inflation);
    let innovation = -y_mean;

    // Outlier gate on the innovation, evaluated with the un-gated S.
    let mut gated = [false; NUM_LEGS];
    if let Some((threshold, forced)) = gate {
        gated = forced;
        if threshold > 0.0 && threshold.is_finite() {
            let s = spread + base_sigma;
            match mode {
                GateMode::PerLeg => {
                    for leg in 0..NUM_LEGS {
                        if !contact_mask[leg] {
                            continue; // already uninformative
                        }
                        let d2 = leg_mahalanobis(&s, &innovation, leg)?;
                        if d2 > threshold {
                            gated[leg] = true;
                        }
                    }
                }
                GateMode::FullVector => {
                    let chol = s
                        .cholesky()
                        .ok_or_else(|| Error::numerical("innovation covariance not invertible"))?;
                    let d2 = innovation.dot(&chol.solve(&innovation));
                    if d2 > threshold {
                        gated = [true; NUM_LEGS];
                    }
                }
            }
        }
    }

    // Rows of gated legs become uninformative exactly like non-contact rows.
    let mut effective_mask = contact_mask;
    for leg in 0..NUM_LEGS {
        if gated[leg] {
            effective_mask[leg] = false;
        }
    }
    let sigma = inflate_covariance(&widened, &effective_mask, ctx.row_inflation);
    let s = spread + sigma;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::numerical("innovation covariance not invertible"))?;
    // K = C S⁻¹ via Kᵀ = S⁻¹ Cᵀ.
    let k = chol.solve(&cross.transpose()).transpose();

    let mean = pred_mean.retract(&(k * innovation));
    let mut cov: StateCovariance = p_pred - k * s * k.transpose();
    let min_eig = floor_eigenvalues(&mut cov, COVARIANCE_EIGEN_FLOOR);

    Ok((
        GaussianBelief { mean, cov },
        StepDiagnostics {
            gated_legs: gated,
            min_covariance_eigenvalue: min_eig,
            iterations: 1,
        },
    ))
}

/// Mahalanobis distance of one leg's 6-dimensional innovation block.
fn leg_mahalanobis(s: &MeasCovariance, innovation: &MeasVector, leg: usize) -> Result<f64> {
    let rows = [
        pos_row(leg),
        pos_row(leg) + 1,
        pos_row(leg) + 2,
        vel_row(leg),
        vel_row(leg) + 1,
        vel_row(leg) + 2,
    ];
    let mut s_leg = SMatrix::<f64, 6, 6>::zeros();
    let mut nu = nalgebra::SVector::<f64, 6>::zeros();
    for (a, &ra) in rows.iter().enumerate() {
        nu[a] = innovation[ra];
        for (b, &rb) in rows.iter().enumerate() {
            s_leg[(a, b)] = s[(ra, rb)];
        }
    }
    let chol = s_leg
        .cholesky()
        .ok_or_else(|| Error::numerical("per-leg innovation covariance not invertible"))?;
    Ok(nu.dot(&chol.solve(&nu)))
}
