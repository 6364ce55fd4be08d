//! Trajectory accuracy metrics and the comparison table.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Accuracy summary for one estimated trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Root-mean-square position error (m).
    pub ate: f64,
    /// Maximum position deviation over the trajectory (m).
    pub mpd: f64,
    /// Endpoint drift as a fraction of traveled distance.
    pub drift_ratio: f64,
    /// Ground-truth path length (m).
    pub trajectory_length: f64,
    /// Per-axis RMSE (m), diagnostic.
    pub per_axis_rmse: [f64; 3],
}

fn check_aligned(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<()> {
    if est.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "estimate has {} samples, truth has {}",
            est.len(),
            truth.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::Alignment("empty trajectories".into()));
    }
    Ok(())
}

/// Absolute translation error: `√(1/T · Σ‖p_t - p̂_t‖²)` with `T` the
/// number of samples actually summed.
pub fn ate(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64> {
    check_aligned(est, truth)?;
    let sum: f64 = est
        .iter()
        .zip(truth.iter())
        .map(|(e, t)| (e - t).norm_squared())
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

/// Maximum position deviation: `max_t ‖p_t - p̂_t‖`.
pub fn mpd(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64> {
    check_aligned(est, truth)?;
    Ok(est
        .iter()
        .zip(truth.iter())
        .map(|(e, t)| (e - t).norm())
        .fold(0.0, f64::max))
}

/// Path length of a trajectory via summed segment norms.
pub fn path_length(traj: &[Vector3<f64>]) -> f64 {
    traj.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Final drift ratio: endpoint error divided by the traveled ground-truth
/// distance.
pub fn drift_ratio(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64> {
    check_aligned(est, truth)?;
    let length = path_length(truth);
    if length <= 0.0 {
        return Err(Error::UndefinedMetric(
            "drift ratio of a zero-length trajectory".into(),
        ));
    }
    let end_err = (est.last().unwrap() - truth.last().unwrap()).norm();
    Ok(end_err / length)
}

/// Computes the full report for one estimate/truth pair.
pub fn report(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<MetricReport> {
    let ate_v = ate(est, truth)?;
    let mpd_v = mpd(est, truth)?;
    let dr = drift_ratio(est, truth)?;
    let mut axis_sq = [0.0f64; 3];
    for (e, t) in est.iter().zip(truth.iter()) {
        for k in 0..3 {
            let d = e[k] - t[k];
            axis_sq[k] += d * d;
        }
    }
    let n = est.len() as f64;
    Ok(MetricReport {
        ate: ate_v,
        mpd: mpd_v,
        drift_ratio: dr,
        trajectory_length: path_length(truth),
        per_axis_rmse: [
            (axis_sq[0] / n).sqrt(),
            (axis_sq[1] / n).sqrt(),
            (axis_sq[2] / n).sqrt(),
        ],
    })
}

/// One labelled row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    /// Variant label.
    pub variant: String,
    /// Metrics for that variant.
    pub report: MetricReport,
}

/// Builds one report per (label, estimate) pair against a common truth,
/// preserving input order.
pub fn compare(
    outputs: &[(String, Vec<Vector3<f64>>)],
    truth: &[Vector3<f64>],
) -> Result<Vec<ComparisonRow>> {
    outputs
        .iter()
        .map(|(variant, est)| {
            Ok(ComparisonRow {
                variant: variant.clone(),
                report: report(est, truth)?,
            })
        })
        .collect()
}

/// Renders the comparison as an aligned plain-text table.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>10} {:>10} {:>9} {:>12}\n",
        "variant", "ATE (m)", "MPD (m)", "DR (%)", "traj len (m)"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:<12} {:>10.4} {:>10.4} {:>8.2}% {:>12.2}\n",
            row.variant,
            row.report.ate,
            row.report.mpd,
            row.report.drift_ratio * 100.0,
            row.report.trajectory_length
        ));
    }
    out
}

/// CSV header of the metrics file.
pub const METRICS_CSV_HEADER: &str = "variant,ate_m,mpd_m,dr_percent,traj_len_m";

/// Renders the comparison as CSV with the documented header.
pub fn format_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            row.variant,
            row.report.ate,
            row.report.mpd,
            row.report.drift_ratio * 100.0,
            row.report.trajectory_length
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_pair(rng: &mut ChaCha12Rng, len: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let truth: Vec<_> = (0..len)
            .map(|k| {
                Vector3::new(
                    k as f64 * 0.01 + rng.gen_range(-0.1..0.1),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.1..0.1),
                )
            })
            .collect();
        let est: Vec<_> = truth
            .iter()
            .map(|t| {
                t + Vector3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                )
            })
            .collect();
        (est, truth)
    }

    /// Brute-force single-loop oracles, coded independently.
    fn ate_oracle(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> f64 {
        let mut acc = 0.0;
        for i in 0..est.len() {
            let dx = est[i].x - truth[i].x;
            let dy = est[i].y - truth[i].y;
            let dz = est[i].z - truth[i].z;
            acc += dx * dx + dy * dy + dz * dz;
        }
        (acc / est.len() as f64).sqrt()
    }

    fn mpd_oracle(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..est.len() {
            let d = ((est[i].x - truth[i].x).powi(2)
                + (est[i].y - truth[i].y).powi(2)
                + (est[i].z - truth[i].z).powi(2))
            .sqrt();
            worst = worst.max(d);
        }
        worst
    }

    fn dr_oracle(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> f64 {
        let mut len = 0.0;
        for i in 1..truth.len() {
            len += (truth[i] - truth[i - 1]).norm();
        }
        (est[est.len() - 1] - truth[truth.len() - 1]).norm() / len
    }

    #[test]
    fn zero_error_for_identical_trajectories() {
        let traj: Vec<_> = (0..100)
            .map(|k| Vector3::new(k as f64 * 0.1, 0.0, 0.0))
            .collect();
        assert_eq!(ate(&traj, &traj).unwrap(), 0.0);
        assert_eq!(mpd(&traj, &traj).unwrap(), 0.0);
        assert_eq!(drift_ratio(&traj, &traj).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_pythagorean_ate() {
        let truth: Vec<_> = (0..50)
            .map(|k| Vector3::new(k as f64 * 0.1, 0.0, 0.0))
            .collect();
        let est: Vec<_> = truth
            .iter()
            .map(|t| t + Vector3::new(0.3, 0.4, 0.0))
            .collect();
        assert_abs_diff_eq!(ate(&est, &truth).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn single_spike_sets_mpd() {
        let truth: Vec<_> = (0..50)
            .map(|k| Vector3::new(k as f64 * 0.1, 0.0, 0.0))
            .collect();
        let mut est = truth.clone();
        est[20] += Vector3::new(0.0, 1.0, 0.0);
        assert_abs_diff_eq!(mpd(&est, &truth).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn drift_ratio_fixture() {
        // 0.2 m endpoint error over a 20 m path = 1%.
        let truth: Vec<_> = (0..=200)
            .map(|k| Vector3::new(k as f64 * 0.1, 0.0, 0.0))
            .collect();
        let mut est = truth.clone();
        let last = est.len() - 1;
        est[last] += Vector3::new(0.0, 0.2, 0.0);
        assert_abs_diff_eq!(drift_ratio(&est, &truth).unwrap(), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn metrics_match_bruteforce_oracles() {
        let mut rng = ChaCha12Rng::seed_from_u64(60);
        for _ in 0..100 {
            let len = rng.gen_range(2..300);
            let (est, truth) = random_pair(&mut rng, len);
            assert_abs_diff_eq!(
                ate(&est, &truth).unwrap(),
                ate_oracle(&est, &truth),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                mpd(&est, &truth).unwrap(),
                mpd_oracle(&est, &truth),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                drift_ratio(&est, &truth).unwrap(),
                dr_oracle(&est, &truth),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn mpd_bounds_ate() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        for _ in 0..100 {
            let (est, truth) = random_pair(&mut rng, 50);
            assert!(mpd(&est, &truth).unwrap() >= ate(&est, &truth).unwrap());
        }
    }

    #[test]
    fn metrics_invariant_under_common_translation() {
        let mut rng = ChaCha12Rng::seed_from_u64(62);
        let (est, truth) = random_pair(&mut rng, 80);
        let shift = Vector3::new(5.0, -3.0, 2.0);
        let est2: Vec<_> = est.iter().map(|p| p + shift).collect();
        let truth2: Vec<_> = truth.iter().map(|p| p + shift).collect();
        assert_abs_diff_eq!(
            ate(&est, &truth).unwrap(),
            ate(&est2, &truth2).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            mpd(&est, &truth).unwrap(),
            mpd(&est2, &truth2).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            drift_ratio(&est, &truth).unwrap(),
            drift_ratio(&est2, &truth2).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ate_scales_linearly_with_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(63);
        let (est, truth) = random_pair(&mut rng, 80);
        // Double the error of every sample.
        let est2: Vec<_> = est
            .iter()
            .zip(truth.iter())
            .map(|(e, t)| t + (e - t) * 2.0)
            .collect();
        assert_abs_diff_eq!(
            ate(&est2, &truth).unwrap(),
            2.0 * ate(&est, &truth).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn mismatched_lengths_error() {
        let a = vec![Vector3::zeros(); 10];
        let b = vec![Vector3::zeros(); 11];
        assert!(matches!(ate(&a, &b), Err(Error::Alignment(_))));
    }

    #[test]
    fn zero_length_trajectory_is_undefined() {
        let a = vec![Vector3::zeros(); 10];
        assert!(matches!(
            drift_ratio(&a, &a),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn compare_preserves_order_and_zero_rows() {
        let truth: Vec<_> = (0..30)
            .map(|k| Vector3::new(k as f64 * 0.1, 0.0, 0.0))
            .collect();
        let rows = compare(
            &[
                ("perfect".to_string(), truth.clone()),
                ("shifted".to_string(), truth.iter().map(|p| p + Vector3::new(0.1, 0.0, 0.0)).collect()),
            ],
            &truth,
        )
        .unwrap();
        assert_eq!(rows[0].variant, "perfect");
        assert_eq!(rows[0].report.ate, 0.0);
        assert_eq!(rows[0].report.mpd, 0.0);
        assert_eq!(rows[0].report.drift_ratio, 0.0);
        assert_eq!(rows[1].variant, "shifted");
        let table = format_table(&rows);
        assert!(table.lines().count() == 3);
        let csv = format_csv(&rows);
        assert!(csv.starts_with(METRICS_CSV_HEADER));
    }
}
