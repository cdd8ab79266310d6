//! On-disk scene pairs: `manifest.json` plus one directory per pair holding
//! `source.xyz`, `target.xyz` and `ground_truth.json`.

use std::fs;
use std::path::{Path, PathBuf};

use psreg::geom::RigidTransform;
use psreg::scene::{generate_scene, read_cloud, write_cloud, ScenePair};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{pool, CliError};

pub const MANIFEST: &str = "manifest.json";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    pub seed: u64,
    /// Paths relative to the dataset directory.
    pub source: String,
    pub target: String,
    pub ground_truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub pairs: Vec<PairEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub seed: u64,
    pub ground_truth: RigidTransform,
    pub overlap_fraction: f64,
}

pub fn pair_id(seed: u64) -> String {
    format!("pair_{seed:06}")
}

/// Generates one pair per configured seed under `out_dir`.
pub fn cmd_generate(config: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<Manifest, CliError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let entries: Vec<Result<PairEntry, CliError>> = pool(jobs)?.install(|| {
        config.seeds.par_iter().map(|&seed| write_pair(config, out_dir, seed)).collect()
    });
    let manifest = Manifest { schema_version: DATASET_SCHEMA_VERSION, pairs: entries.into_iter().collect::<Result<_, _>>()? };
    write_json(&out_dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn write_pair(config: &ExperimentConfig, out_dir: &Path, seed: u64) -> Result<PairEntry, CliError> {
    let scene = generate_scene(seed, &config.scene).map_err(|e| CliError::Config(format!("seed {seed}: {e}")))?;
    let id = pair_id(seed);
    let dir = out_dir.join(&id);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_cloud(&scene.source, &dir.join("source.xyz"))?;
    write_cloud(&scene.target, &dir.join("target.xyz"))?;
    let gt = GroundTruthFile { seed, ground_truth: scene.ground_truth, overlap_fraction: scene.overlap_fraction };
    write_json(&dir.join("ground_truth.json"), &gt)?;
    Ok(PairEntry {
        source: format!("{id}/source.xyz"),
        target: format!("{id}/target.xyz"),
        ground_truth: format!("{id}/ground_truth.json"),
        id,
        seed,
    })
}

pub fn read_manifest(data_dir: &Path) -> Result<Manifest, CliError> {
    if !data_dir.is_dir() {
        return Err(CliError::MissingData(data_dir.to_path_buf()));
    }
    let manifest: Manifest = read_json(&data_dir.join(MANIFEST))?;
    if manifest.schema_version != DATASET_SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "dataset schema version {} is not supported (expected {DATASET_SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

pub fn load_pair(data_dir: &Path, entry: &PairEntry) -> Result<ScenePair, CliError> {
    let gt: GroundTruthFile = read_json(&data_dir.join(&entry.ground_truth))?;
    Ok(ScenePair {
        source: read_cloud(&data_dir.join(&entry.source))?,
        target: read_cloud(&data_dir.join(&entry.target))?,
        ground_truth: gt.ground_truth,
        overlap_fraction: gt.overlap_fraction,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Json(path.to_path_buf(), e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json(PathBuf::from(path), e.to_string()))
}
