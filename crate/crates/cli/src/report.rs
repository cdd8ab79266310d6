use std::path::Path;

use psreg::geom::{MetricThresholds, RegistrationMetrics};
use psreg::register::{RegistrationResult, Registrar};
use psreg::scene::{generate_scene, ScenePair};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{prior_seed, ExperimentConfig};
use crate::dataset::{load_pair, pair_id, read_manifest, PairEntry};
use crate::{pool, CliError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub id: String,
    pub seed: u64,
    pub metrics: RegistrationMetrics,
    pub prior_rre: f64,
    pub prior_rte: f64,
    pub iterations: usize,
    /// Iteration whose estimate was kept; `None` keeps the prior.
    pub selected: Option<usize>,
    pub fine_matches: usize,
    pub failure: Option<String>,
}

impl PairRow {
    pub fn from_result(id: String, seed: u64, scene: &ScenePair, result: &RegistrationResult) -> Self {
        PairRow {
            id,
            seed,
            metrics: result.metrics,
            prior_rre: result.initial_prior.rotation_error_deg(&scene.ground_truth),
            prior_rte: result.initial_prior.translation_error(&scene.ground_truth),
            iterations: result.per_iteration.len(),
            selected: result.selected,
            fine_matches: result.fine.len(),
            failure: result.failure.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub pairs: usize,
    /// Share of pairs whose inlier ratio exceeds the FMR threshold.
    pub feature_matching_recall: f64,
    pub inlier_ratio: f64,
    /// Share of pairs whose RMSE is below the RR threshold.
    pub registration_recall: f64,
    pub mean_rre: f64,
    pub mean_rte: f64,
}

impl Aggregates {
    /// Pure function of the rows. Empty input gives zeros.
    pub fn from_rows(rows: &[PairRow], thresholds: &MetricThresholds) -> Self {
        let n = rows.len();
        let mean = |f: &dyn Fn(&PairRow) -> f64| if n == 0 { 0.0 } else { rows.iter().map(f).sum::<f64>() / n as f64 };
        Aggregates {
            pairs: n,
            feature_matching_recall: mean(&|r| f64::from(u8::from(r.metrics.inlier_ratio > thresholds.fmr_inlier_ratio))),
            inlier_ratio: mean(&|r| r.metrics.inlier_ratio),
            registration_recall: mean(&|r| f64::from(u8::from(r.metrics.rmse < thresholds.rr_rmse))),
            mean_rre: mean(&|r| r.metrics.rre),
            mean_rte: mean(&|r| r.metrics.rte),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub version: String,
    /// RFC 3339; the only field that differs between identical runs.
    pub timestamp: String,
    pub config: ExperimentConfig,
    pub aggregates: Aggregates,
    pub pairs: Vec<PairRow>,
}

impl BenchmarkReport {
    pub fn new(config: ExperimentConfig, pairs: Vec<PairRow>) -> Self {
        BenchmarkReport {
            schema_version: REPORT_SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            aggregates: Aggregates::from_rows(&pairs, &config.pipeline.thresholds),
            config,
            pairs,
        }
    }

    /// Copy with the timestamp blanked, for run-to-run comparison.
    pub fn without_timestamp(&self) -> Self {
        BenchmarkReport { timestamp: String::new(), ..self.clone() }
    }
}

/// Registers every pair. With `data_dir` the pairs come from a generated
/// dataset; otherwise they are generated in memory from the config seeds.
pub fn cmd_register(config: &ExperimentConfig, data_dir: Option<&Path>, jobs: usize) -> Result<BenchmarkReport, CliError> {
    config.validate()?;
    let registrar = Registrar::new(config.pipeline.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let entries: Vec<(String, u64, Option<PairEntry>)> = match data_dir {
        Some(dir) => read_manifest(dir)?.pairs.into_iter().map(|p| (p.id.clone(), p.seed, Some(p))).collect(),
        None => config.seeds.iter().map(|&s| (pair_id(s), s, None)).collect(),
    };
    let rows: Vec<Result<PairRow, CliError>> = pool(jobs)?.install(|| {
        entries
            .par_iter()
            .map(|(id, seed, entry)| {
                let scene = match (data_dir, entry) {
                    (Some(dir), Some(entry)) => load_pair(dir, entry)?,
                    _ => generate_scene(*seed, &config.scene).map_err(|e| CliError::Config(format!("seed {seed}: {e}")))?,
                };
                let result = registrar.register(&scene, prior_seed(*seed));
                log::info!("{id}: rre {:.3} deg, rte {:.4} m", result.metrics.rre, result.metrics.rte);
                Ok(PairRow::from_result(id.clone(), *seed, &scene, &result))
            })
            .collect()
    });
    Ok(BenchmarkReport::new(config.clone(), rows.into_iter().collect::<Result<_, _>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ir: f64, rmse: f64) -> PairRow {
        PairRow {
            id: String::new(),
            seed: 0,
            metrics: RegistrationMetrics { rre: 1.0, rte: 0.5, chamfer: 0.0, inlier_ratio: ir, rmse },
            prior_rre: 0.0,
            prior_rte: 0.0,
            iterations: 1,
            selected: Some(0),
            fine_matches: 0,
            failure: None,
        }
    }

    #[test]
    fn aggregates_count_thresholds_strictly() {
        let t = MetricThresholds::default();
        let rows = [row(t.fmr_inlier_ratio, t.rr_rmse), row(0.5, 0.01), row(0.0, 1.0), row(0.2, 0.1)];
        let a = Aggregates::from_rows(&rows, &t);
        assert_eq!(a.pairs, 4);
        assert_eq!(a.feature_matching_recall, 0.5);
        assert_eq!(a.registration_recall, 0.5);
        assert!((a.inlier_ratio - (0.05 + 0.5 + 0.0 + 0.2) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn empty_rows_aggregate_to_zero() {
        let a = Aggregates::from_rows(&[], &MetricThresholds::default());
        assert_eq!(a.pairs, 0);
        assert_eq!(a.registration_recall, 0.0);
    }
}
