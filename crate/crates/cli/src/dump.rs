//! Plotter-ready dumps of one registration: per-slot expert assignments as
//! PLY clouds of superpoints, and the final correspondences as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use psreg::geom::{PointCloud, RigidTransform};
use psreg::matching::{CoarseMatch, FineMatch};
use psreg::net::SlotKind;
use psreg::register::{prepare_cloud, Registrar};
use psreg::scene::{generate_scene, write_ply, ScenePair};
use serde::{Deserialize, Serialize};

use crate::config::{prior_seed, ExperimentConfig};
use crate::dataset::{load_pair, pair_id, read_manifest, write_json};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDump {
    pub block: usize,
    pub layer: usize,
    pub kind: SlotKind,
    /// Primary expert per superpoint.
    pub source_experts: Vec<usize>,
    pub target_experts: Vec<usize>,
    pub source_file: String,
    pub target_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceDump {
    pub id: String,
    pub seed: u64,
    pub transform: RigidTransform,
    pub ground_truth: RigidTransform,
    pub source_superpoints: Vec<[f64; 3]>,
    pub target_superpoints: Vec<[f64; 3]>,
    pub coarse: Vec<CoarseMatch>,
    pub fine: Vec<FineMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDump {
    pub id: String,
    pub experts: usize,
    pub slots: Vec<SlotDump>,
}

/// Registers the pair for `seed` and writes `routing.json`,
/// `correspondences.json` and two PLY files per routing slot to `out_dir`.
/// With `data_dir` the pair is looked up by seed in that dataset.
pub fn cmd_dump_routing(
    config: &ExperimentConfig,
    seed: u64,
    data_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<RoutingDump, CliError> {
    config.validate()?;
    let scene = load_scene(config, seed, data_dir)?;
    let registrar = Registrar::new(config.pipeline.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let result = registrar.register(&scene, prior_seed(seed));
    if let Some(failure) = &result.failure {
        log::warn!("registration reported a failure: {failure}");
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;

    let src = prepare_cloud(&scene.source, &config.pipeline).superpoints;
    let dst = prepare_cloud(&scene.target, &config.pipeline).superpoints;
    let src_cloud = PointCloud::new(src.superpoints.clone())?;
    let dst_cloud = PointCloud::new(dst.superpoints.clone())?;

    let id = pair_id(seed);
    let mut slots = Vec::new();
    for (k, slot) in result.routing_history.slots.iter().enumerate() {
        let stem = format!("slot{k:02}_block{}", slot.block);
        let (source_file, target_file) = (format!("{stem}_source.ply"), format!("{stem}_target.ply"));
        let source_experts = slot.source.primary();
        let target_experts = slot.target.primary();
        write_ply(&out_dir.join(&source_file), &src_cloud, Some(&as_labels(&source_experts)))?;
        write_ply(&out_dir.join(&target_file), &dst_cloud, Some(&as_labels(&target_experts)))?;
        slots.push(SlotDump { block: slot.block, layer: slot.layer, kind: slot.kind, source_experts, target_experts, source_file, target_file });
    }
    let routing = RoutingDump { id: id.clone(), experts: config.pipeline.net.experts, slots };
    write_json(&out_dir.join("routing.json"), &routing)?;

    let correspondences = CorrespondenceDump {
        id,
        seed,
        transform: result.transform,
        ground_truth: scene.ground_truth,
        source_superpoints: src.superpoints.iter().map(|p| [p.x, p.y, p.z]).collect(),
        target_superpoints: dst.superpoints.iter().map(|p| [p.x, p.y, p.z]).collect(),
        coarse: result.coarse,
        fine: result.fine,
    };
    write_json(&out_dir.join("correspondences.json"), &correspondences)?;
    Ok(routing)
}

fn load_scene(config: &ExperimentConfig, seed: u64, data_dir: Option<&Path>) -> Result<ScenePair, CliError> {
    match data_dir {
        Some(dir) => {
            let manifest = read_manifest(dir)?;
            let entry = manifest
                .pairs
                .iter()
                .find(|p| p.seed == seed)
                .ok_or_else(|| CliError::Config(format!("no pair with seed {seed} in {}", dir.display())))?;
            load_pair(dir, entry)
        }
        None => generate_scene(seed, &config.scene).map_err(|e| CliError::Config(format!("seed {seed}: {e}"))),
    }
}

fn as_labels(experts: &[usize]) -> Vec<i64> {
    experts.iter().map(|&e| e as i64).collect()
}

/// Paths of every file a dump writes, relative to its directory.
pub fn dump_files(dump: &RoutingDump) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = vec!["routing.json".into(), "correspondences.json".into()];
    for s in &dump.slots {
        files.push(s.source_file.clone().into());
        files.push(s.target_file.clone().into());
    }
    files
}
