//! Command implementations behind the `proprio` binary.

use std::path::{Path, PathBuf};

use proprio::config::{load_run_config, RunConfig};
use proprio::dual::{run_variant, EstimatorOutput};
use proprio::error::{Error, Result};
use proprio::evaluation::{self, ComparisonRow};
use proprio::io as pio;
use proprio::sim::{generate, Dataset, GroundTruth};

/// What `simulate` produced.
#[derive(Debug)]
pub struct SimulateSummary {
    /// Number of frames written.
    pub frames: usize,
    /// Paths of the three dataset files.
    pub files: [PathBuf; 3],
}

/// Generates the configured scenario and writes `sensors.csv`, `truth.csv`,
/// and `params_truth.csv` into the output directory.
pub fn cmd_simulate(config_path: &Path, out_override: Option<&Path>) -> Result<SimulateSummary> {
    let mut config = load_run_config(config_path)?;
    if let Some(out) = out_override {
        config.out_dir = out.to_path_buf();
    }
    let scenario = config.effective_scenario().ok_or_else(|| {
        Error::Config("simulate requires a [scenario] block in the config".into())
    })?;
    let geometry = config.effective_geometry();
    let (dataset, truth) = generate(&scenario, &geometry)?;
    std::fs::create_dir_all(&config.out_dir)?;

    let sensors = config.out_dir.join("sensors.csv");
    let truth_path = config.out_dir.join("truth.csv");
    let params = config.out_dir.join("params_truth.csv");
    pio::write_sensors_csv(&sensors, &dataset)?;
    pio::write_truth_csv(&truth_path, &truth)?;
    let rows: Vec<(f64, [f64; 4])> = truth
        .frames
        .iter()
        .map(|f| (f.time, f.calf_lengths))
        .collect();
    pio::write_params_csv(&params, &rows)?;
    log::info!(
        "simulated {} frames into {}",
        dataset.frames.len(),
        config.out_dir.display()
    );
    Ok(SimulateSummary {
        frames: dataset.frames.len(),
        files: [sensors, truth_path, params],
    })
}

fn load_dataset(dir: &Path) -> Result<(Dataset, GroundTruth)> {
    let sensors = dir.join("sensors.csv");
    let truth = dir.join("truth.csv");
    if !sensors.exists() {
        return Err(Error::Config(format!(
            "dataset file not found: {}",
            sensors.display()
        )));
    }
    if !truth.exists() {
        return Err(Error::Config(format!(
            "truth file not found: {}",
            truth.display()
        )));
    }
    Ok((pio::read_sensors_csv(&sensors)?, pio::read_truth_csv(&truth)?))
}

/// Runs every configured estimator over the dataset and writes per-variant
/// trajectory and parameter files. Variants run concurrently; all failures
/// are reported together.
pub fn cmd_estimate(config_path: &Path) -> Result<Vec<PathBuf>> {
    let config = load_run_config(config_path)?;
    cmd_estimate_with(&config)
}

/// [`cmd_estimate`] on an already-parsed configuration.
pub fn cmd_estimate_with(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let (dataset, truth) = load_dataset(config.data_dir())?;
    if truth.frames.is_empty() {
        return Err(Error::Alignment("empty truth file".into()));
    }
    let x0 = truth.frames[0].state;
    let geometry = config.effective_geometry();
    std::fs::create_dir_all(&config.out_dir)?;

    let results: Vec<(String, Result<EstimatorOutput>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .estimators
            .iter()
            .map(|est| {
                let est = est.clone();
                let dataset = &dataset;
                let geometry = &geometry;
                let label = est.variant.label().to_string();
                (
                    label,
                    scope.spawn(move || run_variant(est, dataset, x0, geometry)),
                )
            })
            .collect();
        handles
            .into_iter()
            .map(|(label, h)| (label, h.join().expect("estimator thread panicked")))
            .collect()
    });

    let mut written = Vec::new();
    let mut failures = Vec::new();
    for (label, result) in results {
        match result {
            Ok(output) => {
                let est_path = config.out_dir.join(format!("estimate_{label}.csv"));
                let rows: Vec<(f64, proprio::RobotState)> =
                    output.records.iter().map(|r| (r.time, r.state)).collect();
                pio::write_estimate_csv(&est_path, &rows)?;
                let params_path = config.out_dir.join(format!("params_{label}.csv"));
                let params: Vec<(f64, [f64; 4])> = output
                    .records
                    .iter()
                    .map(|r| (r.time, [r.params[0], r.params[1], r.params[2], r.params[3]]))
                    .collect();
                pio::write_params_csv(&params_path, &params)?;
                log::info!("{label}: {} records", output.records.len());
                written.push(est_path);
                written.push(params_path);
            }
            Err(e) => {
                eprintln!("{label}: {e}");
                failures.push(format!("{label}: {e}"));
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::numerical(format!(
            "{} variant(s) failed: {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    Ok(written)
}

/// Canonical ordering of variant labels in tables.
fn variant_rank(label: &str) -> usize {
    ["QEKF", "UKF-OR", "DualQEKF", "BetaKF", "DualBetaKF", "IEKF"]
        .iter()
        .position(|&v| v == label)
        .unwrap_or(usize::MAX)
}

/// Evaluates every `estimate_*.csv` in a directory against a truth file,
/// writes `metrics.csv` next to the estimates, and returns the formatted
/// comparison table.
pub fn cmd_evaluate(est_dir: &Path, truth_path: &Path) -> Result<(String, Vec<ComparisonRow>)> {
    if !truth_path.exists() {
        return Err(Error::Config(format!(
            "truth file not found: {}",
            truth_path.display()
        )));
    }
    let truth = pio::read_truth_csv(truth_path)?;
    let truth_positions = truth.positions();

    let mut entries: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(est_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_prefix("estimate_").and_then(|s| s.strip_suffix(".csv")) {
            entries.push((stem.to_string(), entry.path()));
        }
    }
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "no estimate_*.csv files in {}",
            est_dir.display()
        )));
    }
    entries.sort_by(|a, b| {
        variant_rank(&a.0)
            .cmp(&variant_rank(&b.0))
            .then_with(|| a.0.cmp(&b.0))
    });

    let mut outputs = Vec::new();
    for (label, path) in &entries {
        let rows = pio::read_estimate_csv(path)?;
        if rows.len() != truth_positions.len() {
            return Err(Error::Alignment(format!(
                "{label}: estimate has {} rows, truth has {}",
                rows.len(),
                truth_positions.len()
            )));
        }
        let positions: Vec<_> = rows.iter().map(|(_, s)| s.position).collect();
        outputs.push((label.clone(), positions));
    }
    let rows = evaluation::compare(&outputs, &truth_positions)?;
    std::fs::write(est_dir.join("metrics.csv"), evaluation::format_csv(&rows))?;
    Ok((evaluation::format_table(&rows), rows))
}
