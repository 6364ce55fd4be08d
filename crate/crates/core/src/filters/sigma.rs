//! Sigma-point machinery for the unscented filters.
//!
//! State sigma points are drawn in the tangent space and retracted onto the
//! manifold; the mean is recovered by iterative tangent-space averaging so
//! the quaternion never leaves the unit sphere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::types::{ErrorVector, RobotState, StateCovariance, TANGENT_DIM};

/// Unscented-transform spread parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtParams {
    /// Spread of the sigma points around the mean.
    pub alpha: f64,
    /// Secondary scaling parameter.
    pub kappa: f64,
    /// Prior-knowledge parameter (2 is exact for Gaussians).
    pub beta: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        UtParams {
            alpha: 1e-3,
            kappa: 0.0,
            beta: 2.0,
        }
    }
}

impl UtParams {
    /// Composite scaling λ for dimension `n`.
    pub fn lambda(&self, n: usize) -> f64 {
        self.alpha * self.alpha * (n as f64 + self.kappa) - n as f64
    }

    /// Mean and covariance weights for dimension `n` (2n+1 points).
    pub fn weights(&self, n: usize) -> (DVector<f64>, DVector<f64>) {
        let lambda = self.lambda(n);
        let denom = n as f64 + lambda;
        let mut w_mean = DVector::from_element(2 * n + 1, 1.0 / (2.0 * denom));
        let mut w_cov = w_mean.clone();
        w_mean[0] = lambda / denom;
        w_cov[0] = lambda / denom + (1.0 - self.alpha * self.alpha + self.beta);
        (w_mean, w_cov)
    }
}

/// Symmetric square root of a PSD matrix. Cholesky when possible, eigen
/// decomposition with negative eigenvalues clamped to zero otherwise (the
/// degenerate case matters: a parameter filter may legitimately run with a
/// zero random-walk covariance).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = m.clone().cholesky() {
        return chol.l();
    }
    let eig = m.clone().symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals)
}

/// Sigma points over the robot-state manifold.
#[derive(Debug, Clone)]
pub struct SigmaPoints {
    /// The 2n+1 retracted states.
    pub states: Vec<RobotState>,
    /// Mean weights.
    pub w_mean: DVector<f64>,
    /// Covariance weights.
    pub w_cov: DVector<f64>,
}

impl SigmaPoints {
    /// Draws 2n+1 points from a tangent-space Gaussian around `mean`.
    pub fn draw(mean: &RobotState, cov: &StateCovariance, params: &UtParams) -> SigmaPoints {
        let n = TANGENT_DIM;
        let lambda = params.lambda(n);
        let scaled = DMatrix::from_iterator(n, n, cov.iter().copied()) * (n as f64 + lambda);
        let root = psd_sqrt(&scaled);
        let (w_mean, w_cov) = params.weights(n);

        let mut states = Vec::with_capacity(2 * n + 1);
        states.push(*mean);
        for j in 0..n {
            let col = root.column(j);
            let mut delta = ErrorVector::zeros();
            for k in 0..n {
                delta[k] = col[k];
            }
            states.push(mean.retract(&delta));
            states.push(mean.retract(&(-delta)));
        }
        // Interleave: reorder to [x0, +cols..., -cols...] convention.
        let mut ordered = Vec::with_capacity(2 * n + 1);
        ordered.push(states[0]);
        for j in 0..n {
            ordered.push(states[1 + 2 * j]);
        }
        for j in 0..n {
            ordered.push(states[2 + 2 * j]);
        }
        SigmaPoints {
            states: ordered,
            w_mean,
            w_cov,
        }
    }

    /// Weighted mean on the manifold by iterative tangent averaging.
    pub fn mean(&self) -> RobotState {
        let mut mean = self.states[0];
        for _ in 0..32 {
            let mut delta = ErrorVector::zeros();
            for (w, x) in self.w_mean.iter().zip(self.states.iter()) {
                delta += *w * mean.local(x);
            }
            mean = mean.retract(&delta);
            if delta.norm() < 1e-12 {
                break;
            }
        }
        mean
    }

    /// Tangent covariance of the points around `mean`, without added noise.
    pub fn covariance_about(&self, mean: &RobotState) -> StateCovariance {
        let mut cov = StateCovariance::zeros();
        for (w, x) in self.w_cov.iter().zip(self.states.iter()) {
            let d = mean.local(x);
            cov += *w * d * d.transpose();
        }
        cov
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{blocks, Quat};
    use nalgebra::Vector3;

    fn test_belief() -> (RobotState, StateCovariance) {
        let mut mean = RobotState::zeroed();
        mean.position = Vector3::new(0.3, -0.2, 0.31);
        mean.velocity = Vector3::new(0.4, 0.0, 0.0);
        mean.orientation = Quat::exp(&Vector3::new(0.1, -0.3, 0.7)).unwrap();
        let mut cov = StateCovariance::identity() * 1e-4;
        cov[(blocks::DTHETA, blocks::DTHETA + 1)] = 2e-5;
        cov[(blocks::DTHETA + 1, blocks::DTHETA)] = 2e-5;
        (mean, cov)
    }

    #[test]
    fn weights_sum_to_one() {
        let params = UtParams::default();
        let (w_mean, w_cov) = params.weights(TANGENT_DIM);
        assert!((w_mean.sum() - 1.0).abs() < 1e-9);
        assert_eq!(w_cov.len(), 2 * TANGENT_DIM + 1);
    }

    #[test]
    fn sigma_points_reconstruct_mean_and_covariance() {
        let (mean, cov) = test_belief();
        let points = SigmaPoints::draw(&mean, &cov, &UtParams::default());
        let rec_mean = points.mean();
        assert!(mean.local(&rec_mean).norm() < 1e-10);
        let rec_cov = points.covariance_about(&rec_mean);
        assert!((rec_cov - cov).abs().max() < 1e-10);
    }

    #[test]
    fn sigma_points_handle_degenerate_covariance() {
        let (mean, _) = test_belief();
        let cov = StateCovariance::zeros();
        let points = SigmaPoints::draw(&mean, &cov, &UtParams::default());
        for x in &points.states {
            assert!(mean.local(x).norm() < 1e-14);
        }
    }

    #[test]
    fn unscented_transform_exact_on_affine_maps() {
        // Pushing sigma points through an affine function must reproduce the
        // exact linear-Gaussian moment propagation.
        let (mean, cov) = test_belief();
        let points = SigmaPoints::draw(&mean, &cov, &UtParams::default());
        let a = nalgebra::SMatrix::<f64, 3, { TANGENT_DIM }>::from_fn(|r, c| {
            ((r * 31 + c * 7) % 11) as f64 / 11.0 - 0.4
        });
        let b = Vector3::new(0.1, -0.2, 0.3);

        let f = |x: &RobotState| a * mean.local(x) + b;
        let mut y_mean = Vector3::zeros();
        for (w, x) in points.w_mean.iter().zip(points.states.iter()) {
            y_mean += *w * f(x);
        }
        let mut y_cov = nalgebra::Matrix3::<f64>::zeros();
        for (w, x) in points.w_cov.iter().zip(points.states.iter()) {
            let d = f(x) - y_mean;
            y_cov += *w * d * d.transpose();
        }
        let exact_mean = b;
        let exact_cov = a * cov * a.transpose();
        assert!((y_mean - exact_mean).norm() < 1e-8);
        assert!((y_cov - exact_cov).abs().max() < 1e-8);
    }
}
