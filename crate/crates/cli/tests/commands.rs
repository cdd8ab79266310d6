use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use psreg::net::RoutingMode;
use psreg_cli::dump::dump_files;
use psreg_cli::{
    cmd_ablate, cmd_dump_routing, cmd_generate, cmd_register, read_manifest, Aggregates, Axis, CliError, ExperimentConfig,
};
use sha2::{Digest, Sha256};

fn small_config(seeds: &[u64]) -> ExperimentConfig {
    let mut config = ExperimentConfig { seeds: seeds.to_vec(), ..ExperimentConfig::default() };
    config.scene.points = 800;
    config.pipeline.iterations = 2;
    config
}

/// Digest of every file under `dir`, keyed by relative path.
fn tree_digest(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(fs::read(&path).unwrap());
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, format!("{digest:x}"));
            }
        }
    }
    out
}

#[test]
fn generate_is_byte_identical_across_runs_and_thread_counts() {
    let config = small_config(&[3, 4, 5]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let manifest = cmd_generate(&config, a.path(), 1).unwrap();
    cmd_generate(&config, b.path(), 3).unwrap();
    assert_eq!(manifest.pairs.iter().map(|p| p.seed).collect::<Vec<_>>(), [3, 4, 5]);
    let digests = tree_digest(a.path());
    assert_eq!(digests.len(), 1 + 3 * 3);
    assert_eq!(digests, tree_digest(b.path()));
}

#[test]
fn empty_seed_list_writes_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cmd_generate(&small_config(&[]), dir.path(), 1).unwrap();
    assert!(manifest.pairs.is_empty());
    assert_eq!(read_manifest(dir.path()).unwrap(), manifest);
    let report = cmd_register(&small_config(&[]), Some(dir.path()), 1).unwrap();
    assert_eq!(report.aggregates.pairs, 0);
}

#[test]
fn missing_data_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let err = cmd_register(&small_config(&[1]), Some(&missing), 1).unwrap_err();
    assert!(matches!(err, CliError::MissingData(_)));
}

#[test]
fn registering_from_disk_matches_in_memory_generation() {
    let config = small_config(&[7, 8]);
    let dir = tempfile::tempdir().unwrap();
    cmd_generate(&config, dir.path(), 1).unwrap();
    let from_disk = cmd_register(&config, Some(dir.path()), 1).unwrap();
    let in_memory = cmd_register(&config, None, 2).unwrap();
    assert_eq!(from_disk.pairs.len(), 2);
    // ASCII clouds round to a micron, so only the pair identities must agree exactly
    for (a, b) in from_disk.pairs.iter().zip(&in_memory.pairs) {
        assert_eq!((&a.id, a.seed), (&b.id, b.seed));
        assert!((a.prior_rre - b.prior_rre).abs() < 1e-3);
    }
}

#[test]
fn report_aggregates_are_recomputable_from_rows() {
    let config = small_config(&[0, 1, 2]);
    let report = cmd_register(&config, None, 1).unwrap();
    assert_eq!(report.aggregates, Aggregates::from_rows(&report.pairs, &config.pipeline.thresholds));
    let text = serde_json::to_string(&report).unwrap();
    let back: psreg_cli::BenchmarkReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
    assert_eq!(report.without_timestamp(), cmd_register(&config, None, 3).unwrap().without_timestamp());
}

#[test]
fn ablation_rows_equal_individual_runs() {
    let config = small_config(&[11, 12]);
    let values = vec!["0".to_string(), "0.3".to_string()];
    let (table, reports) = cmd_ablate(&config, Axis::TauO, &values, None, 1).unwrap();
    assert_eq!(table.rows.len(), 2);
    for (row, value) in table.rows.iter().zip(&values) {
        let direct = cmd_register(&Axis::TauO.apply(&config, value).unwrap(), None, 1).unwrap();
        assert_eq!(row.aggregates, direct.aggregates);
    }
    assert_eq!(reports[1].config.pipeline.prior.tau_o, 0.3);
    assert!(cmd_ablate(&config, Axis::TauO, &[], None, 1).is_err());
}

#[test]
fn routing_dump_lists_every_file_it_writes() {
    let config = small_config(&[5]);
    let dir = tempfile::tempdir().unwrap();
    let dump = cmd_dump_routing(&config, 5, None, dir.path()).unwrap();
    let net = &config.pipeline.net;
    assert_eq!(dump.experts, net.experts);
    assert!(!dump.slots.is_empty());
    let files = dump_files(&dump);
    assert_eq!(files.len(), 2 + 2 * dump.slots.len());
    for f in &files {
        assert!(dir.path().join(f).is_file(), "{} missing", f.display());
    }
    let on_disk = fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(on_disk, files.len());
}

#[test]
fn dense_routing_dump_uses_a_single_expert() {
    let mut config = small_config(&[5]);
    config.pipeline.net.routing = RoutingMode::Dense;
    let dir = tempfile::tempdir().unwrap();
    let dump = cmd_dump_routing(&config, 5, None, dir.path()).unwrap();
    for slot in &dump.slots {
        assert!(slot.source_experts.iter().chain(&slot.target_experts).all(|&e| e == 0));
    }
}

fn psreg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_psreg"))
}

#[test]
fn binary_runs_each_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    fs::write(&config_path, serde_json::to_string(&small_config(&[2])).unwrap()).unwrap();
    let config = config_path.to_str().unwrap();
    let data = dir.path().join("data");

    let status = psreg().args(["generate", "--config", config, "--out"]).arg(&data).output().unwrap().status;
    assert!(status.success());
    assert_eq!(read_manifest(&data).unwrap().pairs.len(), 1);

    let report = dir.path().join("out/report.json");
    let status = psreg().args(["register", "--config", config, "--data"]).arg(&data).arg("--out").arg(&report).output().unwrap().status;
    assert!(status.success());
    let parsed: psreg_cli::BenchmarkReport = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed.pairs.len(), 1);

    let ablation = dir.path().join("ablation");
    let status = psreg()
        .args(["ablate", "--config", config, "--axis", "routing", "--values", "prior,vanilla", "--out"])
        .arg(&ablation)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(ablation.join("ablation.json").is_file());
    assert_eq!(fs::read_to_string(ablation.join("ablation.txt")).unwrap().lines().count(), 3);

    let routing = dir.path().join("routing");
    let status = psreg().args(["dump-routing", "--config", config, "--out"]).arg(&routing).output().unwrap().status;
    assert!(status.success());
    assert!(routing.join("routing.json").is_file());
}

#[test]
fn binary_fails_cleanly_on_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let run = psreg().args(["register", "--data"]).arg(dir.path().join("absent")).arg("--out").arg(&out).output().unwrap();
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("does not exist"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"pipeline": {"voxel_size": -1.0}}"#).unwrap();
    let run = psreg().args(["generate", "--config"]).arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(run.status.code(), Some(1));

    let run = psreg().args(["ablate", "--axis", "depth", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!run.status.success());
}
