//! Prints the canonical standard-scenario run configuration as TOML.

use proprio::config::{to_toml, RunConfig};
use proprio::dual::{EstimatorConfig, EstimatorVariant};
use proprio::sim::ScenarioConfig;

fn main() {
    let config = RunConfig {
        out_dir: std::env::args()
            .nth(1)
            .unwrap_or_else(|| "runs/standard".into())
            .into(),
        scenario: Some(ScenarioConfig::standard()),
        dataset_dir: None,
        seed: None,
        geometry: None,
        estimators: vec![
            EstimatorConfig::for_variant(EstimatorVariant::Qekf),
            EstimatorConfig::for_variant(EstimatorVariant::UkfOr),
            EstimatorConfig::for_variant(EstimatorVariant::DualQekf),
            EstimatorConfig::for_variant(EstimatorVariant::BetaKf),
            EstimatorConfig::for_variant(EstimatorVariant::DualBetaKf),
        ],
    };
    println!("{}", to_toml(&config).unwrap());
}
