use psreg::geom::RigidTransform;
use psreg::matching::{inlier_fraction, FineMatch};
use psreg::pce::{assign_prior_embeddings, rows_differ, CodingScheme, PriorEmbeddingTable, Side};
use psreg::prior::PriorConfig;
use psreg::register::{lgr, prepare_cloud, LgrConfig, PipelineConfig, Registrar};
use psreg::scene::{generate_scene, read_cloud, write_cloud, SceneConfig};

fn quiet_scene(seed: u64) -> psreg::scene::ScenePair {
    generate_scene(seed, &SceneConfig { noise_sigma: 0.0, ..SceneConfig::default() }).unwrap()
}

#[test]
fn ground_truth_prior_gives_exact_estimates() {
    let registrar = Registrar::new(PipelineConfig::default()).unwrap();
    for seed in 0..3 {
        let scene = quiet_scene(seed);
        let result = registrar.register_from(&scene, &scene.ground_truth);
        let first = &result.per_iteration[0].transform;
        assert!(first.rotation_error_deg(&scene.ground_truth) < 1e-4, "seed {seed}");
        assert!(first.translation_error(&scene.ground_truth) < 1e-6, "seed {seed}");
    }
}

#[test]
fn anchors_get_distinct_embeddings_and_others_share_one() {
    let config = PipelineConfig::default();
    let registrar = Registrar::new(config.clone()).unwrap();
    let scene = quiet_scene(4);
    let (src, dst) = (prepare_cloud(&scene.source, &config), prepare_cloud(&scene.target, &config));
    let prior = registrar.prior_correspondences(&scene, &src, &dst, &scene.ground_truth);
    assert!(!prior.is_empty());

    let table = PriorEmbeddingTable::for_prior(&prior, CodingScheme::Ordered, registrar.model().embedding()).unwrap();
    let emb = assign_prior_embeddings(src.superpoints.len(), Side::Source, &prior, &table, CodingScheme::Ordered).unwrap();
    let non_anchor = table.projected.row(0);
    for (i, positions) in prior.source_positions.iter().enumerate() {
        assert_eq!(positions.is_empty(), !rows_differ(emb.row(i), non_anchor), "superpoint {i}");
    }
}

#[test]
fn a_noisy_prior_is_improved() {
    let config = PipelineConfig {
        prior: PriorConfig { rotation_noise: 15.0, translation_noise: 0.3, ..PriorConfig::default() },
        ..PipelineConfig::default()
    };
    let registrar = Registrar::new(config).unwrap();
    let scene = generate_scene(1, &SceneConfig::default()).unwrap();
    let result = registrar.register(&scene, 99);
    let before = result.initial_prior.rotation_error_deg(&scene.ground_truth);
    assert!(result.metrics.rre < before, "{} vs {before}", result.metrics.rre);
    assert!(result.fitness >= result.per_iteration.iter().map(|r| r.fitness).fold(0.0, f64::max));
}

#[test]
fn lgr_shrugs_off_scrambled_pairs() {
    let scene = quiet_scene(2);
    let truth = scene.ground_truth;
    let tree = psreg::spatial::KdTree::new(scene.target.points());
    let mut fine: Vec<FineMatch> = Vec::new();
    for (k, p) in scene.source.points().iter().enumerate().step_by(7) {
        if let Some((j, d2)) = tree.nearest(&truth.apply(p)) {
            if d2 < 1e-12 {
                fine.push(FineMatch { src: k, dst: j, confidence: 1.0, group: fine.len() / 8 });
            }
        }
    }
    assert!(fine.len() > 40);
    let n = fine.len();
    for (k, m) in fine.iter_mut().enumerate().filter(|(k, _)| k % 4 == 0) {
        m.dst = (m.dst + 97 * k + 13) % n.max(scene.target.len());
    }
    let out = lgr(&fine, &scene.source, &scene.target, &LgrConfig::default()).unwrap();
    assert!(out.transform.rotation_error_deg(&truth) < 1e-6);
    assert!(inlier_fraction(&fine, &scene.source, &scene.target, &truth, 0.05) < 0.8);
}

#[test]
fn clouds_survive_a_disk_round_trip() {
    let scene = quiet_scene(6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("source.xyz");
    write_cloud(&scene.source, &path).unwrap();
    let back = read_cloud(&path).unwrap();
    assert_eq!(back.len(), scene.source.len());
    for (a, b) in back.points().iter().zip(scene.source.points()) {
        assert!((a - b).amax() <= 1e-6);
    }
}

#[test]
fn registration_is_deterministic() {
    let registrar = Registrar::new(PipelineConfig::default()).unwrap();
    let scene = generate_scene(8, &SceneConfig::default()).unwrap();
    let (a, b) = (registrar.register(&scene, 3), registrar.register(&scene, 3));
    assert_eq!(a.transform, b.transform);
    assert_eq!(a.fine, b.fine);
    assert_eq!(a.per_iteration, b.per_iteration);
    let _: &RigidTransform = &a.initial_prior;
}
