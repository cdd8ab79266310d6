//! Experiment harness around [`psreg`]: dataset generation, batch
//! registration with aggregate metrics, ablation sweeps and routing dumps.
//!
//! Every command is deterministic for a given config. Pairs run in parallel
//! on a dedicated thread pool, and results are always assembled in seed
//! order, so the thread count never changes a report.

pub mod ablate;
pub mod config;
pub mod dataset;
pub mod dump;
pub mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use ablate::{cmd_ablate, AblationRow, AblationTable, Axis};
pub use config::{prior_seed, ExperimentConfig, DEFAULTS_JSON};
pub use dataset::{cmd_generate, load_pair, read_manifest, Manifest, PairEntry};
pub use dump::{cmd_dump_routing, RoutingDump};
pub use report::{cmd_register, Aggregates, BenchmarkReport, PairRow, REPORT_SCHEMA_VERSION};

#[derive(Error, Debug)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data directory {0} does not exist")]
    MissingData(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}: {1}")]
    Json(PathBuf, String),
    #[error(transparent)]
    Cloud(#[from] psreg::scene::IoError),
    #[error(transparent)]
    Geom(#[from] psreg::geom::GeomError),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

/// A pool of `jobs` workers; zero means one per core.
pub(crate) fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::Pool(e.to_string()))
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    dataset::write_json(path, value)
}
