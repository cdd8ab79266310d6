//! Local-to-global transform estimation and the iterative registration loop.
//!
//! Each iteration turns the current prior transform into prior superpoint
//! correspondences, encodes both clouds with them, matches, and estimates a
//! new transform that becomes the next iteration's prior. Only the transform
//! is carried between iterations.
//!
//! Estimates do not always improve monotonically, so the loop returns the
//! iterate with the highest cloud fitness (the share of source points that
//! land near a target point). The initial prior competes too. Fitness uses
//! the raw clouds only, never the ground truth.

use std::collections::BTreeMap;

use log::debug;
use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{compute_metrics, weighted_procrustes, MetricThresholds, PointCloud, RegistrationMetrics, RigidTransform};
use crate::matching::{match_coarse, match_fine, CoarseMatch, FineMatch, MatchConfig, MatchError, MatchSide};
use crate::net::{Model, NetConfig, NetError, RoutingHistory, RoutingMode};
use crate::pce::{assign_prior_embeddings, CodingScheme, PceError, PriorEmbeddingTable, Side};
use crate::prior::{overlap_ratio_matrix, select_prior_correspondences, simulate_prior_transform, PriorConfig, PriorCorrespondences, PriorError};
use crate::scene::{compute_descriptors, point_descriptors, voxel_downsample, DescriptorConfig, ScenePair, SuperpointSet};
use crate::spatial::{sq_dist, KdTree};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum RegisterError {
    #[error("need at least 3 usable correspondences, found {found}")]
    InsufficientCorrespondences { found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Pce(#[from] PceError),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LgrConfig {
    pub rounds: usize,
    /// Residual below which a correspondence counts as an inlier, meters.
    pub inlier_radius: f64,
    /// Halvings of `inlier_radius` in the final precision stage.
    pub precision_steps: usize,
    /// Candidates are also refined from `inlier_radius * 2^widening_steps`
    /// down to `inlier_radius`, so a rough local solution can reach distant inliers.
    pub widening_steps: usize,
}

impl Default for LgrConfig {
    fn default() -> Self {
        LgrConfig { rounds: 5, inlier_radius: 0.05, precision_steps: 6, widening_steps: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgrResult {
    pub transform: RigidTransform,
    pub inlier_count: usize,
    /// Candidates that were solved and scored.
    pub candidates: usize,
    /// Inlier count after candidate selection and after each accepted round.
    pub round_inliers: Vec<usize>,
    /// Inliers at each shrunken radius of the precision stage.
    pub precision_inliers: Vec<usize>,
}

fn count_inliers(t: &RigidTransform, src: &[Vector3<f64>], dst: &[Vector3<f64>], radius: f64) -> usize {
    let r2 = radius * radius;
    src.iter().zip(dst).filter(|(s, d)| sq_dist(&t.apply(s), d) < r2).count()
}

// Zero-confidence matches would otherwise leave a weight vector summing to zero.
const WEIGHT_FLOOR: f64 = 1e-12;

fn solve(idx: &[usize], src: &[Vector3<f64>], dst: &[Vector3<f64>], weights: &[f64]) -> Option<RigidTransform> {
    let s: Vec<_> = idx.iter().map(|&i| src[i]).collect();
    let d: Vec<_> = idx.iter().map(|&i| dst[i]).collect();
    let w: Vec<_> = idx.iter().map(|&i| weights[i]).collect();
    weighted_procrustes(&s, &d, &w).ok()
}

struct Problem<'a> {
    src: &'a [Vector3<f64>],
    dst: &'a [Vector3<f64>],
    weights: &'a [f64],
}

impl Problem<'_> {
    /// Re-solves on the inliers of `transform` for up to `rounds` steps,
    /// keeping a step only if the inlier count does not drop. Every accepted
    /// count is pushed to `trace`.
    fn refine(&self, mut transform: RigidTransform, radius: f64, rounds: usize, trace: &mut Vec<usize>) -> (RigidTransform, usize) {
        let r2 = radius * radius;
        let mut count = count_inliers(&transform, self.src, self.dst, radius);
        trace.push(count);
        for _ in 0..rounds {
            let inliers: Vec<usize> = (0..self.src.len()).filter(|&k| sq_dist(&transform.apply(&self.src[k]), &self.dst[k]) < r2).collect();
            if inliers.len() < 3 {
                break;
            }
            let Some(t) = solve(&inliers, self.src, self.dst, self.weights) else { break };
            let next = count_inliers(&t, self.src, self.dst, radius);
            if next < count {
                break;
            }
            let settled = t.rotation_error_deg(&transform) == 0.0 && t.translation_error(&transform) == 0.0;
            transform = t;
            count = next;
            trace.push(count);
            if settled {
                break;
            }
        }
        (transform, count)
    }
}

/// One weighted Procrustes candidate per correspondence group with at least
/// three pairs. Each candidate is refined on its own inliers and scored by
/// inliers over all pairs; the best is refined again for up to `rounds`
/// steps, keeping a step only if the inlier count does not drop. Without any
/// eligible group all pairs form one candidate.
///
/// A precision stage then repeats the refinement at `inlier_radius / 2`,
/// `/ 4`, … so that near-miss pairs stop pulling an exact solution off.
pub fn lgr(fine: &[FineMatch], src: &PointCloud, dst: &PointCloud, config: &LgrConfig) -> Result<LgrResult, RegisterError> {
    if fine.len() < 3 {
        return Err(RegisterError::InsufficientCorrespondences { found: fine.len() });
    }
    let sp: Vec<_> = fine.iter().map(|m| src.points()[m.src]).collect();
    let dp: Vec<_> = fine.iter().map(|m| dst.points()[m.dst]).collect();
    let weights: Vec<f64> = fine.iter().map(|m| m.confidence.max(0.0) + WEIGHT_FLOOR).collect();
    let problem = Problem { src: &sp, dst: &dp, weights: &weights };

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, m) in fine.iter().enumerate() {
        groups.entry(m.group).or_default().push(k);
    }
    let mut subsets: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= 3).collect();
    if subsets.is_empty() {
        subsets.push((0..fine.len()).collect());
    }

    let mut best: Option<(RigidTransform, usize)> = None;
    let mut candidates = 0;
    for subset in &subsets {
        let Some(t) = solve(subset, &sp, &dp, &weights) else { continue };
        candidates += 1;
        let (mut t, mut count) = problem.refine(t, config.inlier_radius, config.rounds, &mut Vec::new());
        if config.widening_steps > 0 {
            let mut wide = t;
            for step in (0..=config.widening_steps).rev() {
                wide = problem.refine(wide, config.inlier_radius * f64::from(1u32 << step.min(16)), config.rounds, &mut Vec::new()).0;
            }
            let wide_count = count_inliers(&wide, &sp, &dp, config.inlier_radius);
            if wide_count > count {
                (t, count) = (wide, wide_count);
            }
        }
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((t, count));
        }
    }
    let (transform, _) = best.ok_or(RegisterError::InsufficientCorrespondences { found: 0 })?;
    let mut round_inliers = Vec::new();
    let (mut transform, inlier_count) = problem.refine(transform, config.inlier_radius, config.rounds, &mut round_inliers);

    let mut precision_inliers = Vec::new();
    let mut radius = config.inlier_radius;
    for _ in 0..config.precision_steps {
        radius /= 2.0;
        let mut trace = Vec::new();
        let (t, count) = problem.refine(transform, radius, config.rounds, &mut trace);
        if count < 3 {
            break;
        }
        transform = t;
        precision_inliers.push(count);
    }
    let inlier_count = if precision_inliers.is_empty() { inlier_count } else { count_inliers(&transform, &sp, &dp, config.inlier_radius) };
    Ok(LgrResult { transform, inlier_count, candidates, round_inliers, precision_inliers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Superpoint voxel edge, meters.
    pub voxel_size: f64,
    pub descriptors: DescriptorConfig,
    pub prior: PriorConfig,
    pub coding: CodingScheme,
    pub net: NetConfig,
    pub matching: MatchConfig,
    pub lgr: LgrConfig,
    /// Outer iterations `E`.
    pub iterations: usize,
    pub thresholds: MetricThresholds,
    /// Stop once an estimate is within this rotation (degrees) of the prior that fed it.
    pub convergence_rotation_deg: f64,
    /// ... and within this translation (meters).
    pub convergence_translation: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            voxel_size: 0.3,
            descriptors: DescriptorConfig::default(),
            prior: PriorConfig::default(),
            coding: CodingScheme::Ordered,
            net: NetConfig::default(),
            matching: MatchConfig::default(),
            lgr: LgrConfig::default(),
            iterations: 6,
            thresholds: MetricThresholds::default(),
            convergence_rotation_deg: 0.1,
            convergence_translation: 0.001,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), RegisterError> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(RegisterError::Config(format!("voxel_size must be positive, got {}", self.voxel_size)));
        }
        if self.iterations == 0 {
            return Err(RegisterError::Config("iterations must be at least 1".into()));
        }
        if self.descriptors.width != self.net.width {
            return Err(RegisterError::Config(format!(
                "descriptor width {} differs from network width {}",
                self.descriptors.width, self.net.width
            )));
        }
        if !(self.descriptors.radius > 0.0) || self.descriptors.width < 8 || self.descriptors.point_neighbors == 0 {
            return Err(RegisterError::Config("descriptor radius, width ≥ 8 and point_neighbors ≥ 1 are required".into()));
        }
        if !(self.lgr.inlier_radius > 0.0) {
            return Err(RegisterError::Config("lgr inlier_radius must be positive".into()));
        }
        self.prior.validate()?;
        self.net.validate()?;
        self.matching.validate()?;
        Ok(())
    }

    fn overlap_radius(&self) -> f64 {
        self.prior.patch_inlier_radius.unwrap_or(self.voxel_size)
    }
}

/// Per-cloud quantities that do not depend on the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCloud {
    pub superpoints: SuperpointSet,
    pub point_features: Array2<f64>,
}

pub fn prepare_cloud(cloud: &PointCloud, config: &PipelineConfig) -> PreparedCloud {
    let sp = voxel_downsample(cloud, config.voxel_size);
    PreparedCloud {
        superpoints: compute_descriptors(cloud, &sp, &config.descriptors),
        point_features: point_descriptors(cloud, config.descriptors.point_neighbors),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutput {
    pub prior_transform: RigidTransform,
    pub prior: PriorCorrespondences,
    pub coarse: Vec<CoarseMatch>,
    pub fine: Vec<FineMatch>,
    pub lgr: LgrResult,
    pub history: RoutingHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub prior_transform: RigidTransform,
    pub transform: RigidTransform,
    pub inlier_count: usize,
    pub prior_pairs: usize,
    pub coarse_matches: usize,
    pub fine_matches: usize,
    pub fitness: f64,
    pub metrics: RegistrationMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Best-fitting iterate, or the initial prior when no estimate beats it.
    pub transform: RigidTransform,
    /// Iteration whose estimate was selected.
    pub selected: Option<usize>,
    pub fitness: f64,
    pub inlier_count: usize,
    /// Set when any iteration failed; earlier estimates are kept.
    pub failed: bool,
    pub failure: Option<String>,
    pub initial_prior: RigidTransform,
    pub per_iteration: Vec<IterationRecord>,
    /// Metrics of `transform` with the attached correspondences.
    pub metrics: RegistrationMetrics,
    /// Attachments of the selected iteration, or of the last one run when
    /// the prior was kept.
    pub routing_history: RoutingHistory,
    pub coarse: Vec<CoarseMatch>,
    pub fine: Vec<FineMatch>,
}

/// A validated configuration together with its network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Registrar {
    config: PipelineConfig,
    model: Model,
}

impl Registrar {
    pub fn new(config: PipelineConfig) -> Result<Self, RegisterError> {
        config.validate()?;
        let model = Model::new(config.net.clone())?;
        Ok(Registrar { config, model })
    }

    /// Swaps in externally supplied network parameters.
    pub fn with_model(mut self, model: Model) -> Result<Self, RegisterError> {
        if model.config() != &self.config.net {
            return Err(RegisterError::Config("model configuration differs from the pipeline's".into()));
        }
        self.model = model;
        Ok(self)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Prior correspondences under `prior_transform`; none above `tau_o`
    /// leaves every superpoint a non-anchor.
    pub fn prior_correspondences(
        &self,
        scene: &ScenePair,
        src: &PreparedCloud,
        dst: &PreparedCloud,
        prior_transform: &RigidTransform,
    ) -> PriorCorrespondences {
        let o_hat = overlap_ratio_matrix(
            &scene.source,
            &src.superpoints,
            &scene.target,
            &dst.superpoints,
            prior_transform,
            self.config.overlap_radius(),
        );
        select_prior_correspondences(&o_hat, self.config.prior.tau_o)
            .unwrap_or_else(|_| PriorCorrespondences::empty(src.superpoints.len(), dst.superpoints.len()))
    }

    /// Prior → embeddings → encoder → matching → LGR, once.
    pub fn run_iteration(
        &self,
        scene: &ScenePair,
        src: &PreparedCloud,
        dst: &PreparedCloud,
        prior_transform: &RigidTransform,
    ) -> Result<IterationOutput, RegisterError> {
        let prior = self.prior_correspondences(scene, src, dst, prior_transform);
        let (ns, nt) = (src.superpoints.len(), dst.superpoints.len());
        let embeddings = if self.config.net.routing == RoutingMode::Prior {
            let table = PriorEmbeddingTable::for_prior(&prior, self.config.coding, self.model.embedding())?;
            Some((
                assign_prior_embeddings(ns, Side::Source, &prior, &table, self.config.coding)?,
                assign_prior_embeddings(nt, Side::Target, &prior, &table, self.config.coding)?,
            ))
        } else {
            None
        };
        let encoded = self.model.encode(
            &src.superpoints.features,
            &dst.superpoints.features,
            embeddings.as_ref().map(|(a, b)| (a, b)),
        )?;
        let coarse = match_coarse(&encoded.source, &encoded.target, &self.config.matching)?;
        let fine = match_fine(
            MatchSide { cloud: &scene.source, superpoints: &src.superpoints, point_features: &src.point_features },
            MatchSide { cloud: &scene.target, superpoints: &dst.superpoints, point_features: &dst.point_features },
            &coarse,
            &self.config.matching,
        );
        let lgr = lgr(&fine.matches, &scene.source, &scene.target, &self.config.lgr)?;
        Ok(IterationOutput { prior_transform: *prior_transform, prior, coarse, fine: fine.matches, lgr, history: encoded.history })
    }

    /// Registers one pair starting from a simulated prior drawn with `seed`.
    pub fn register(&self, scene: &ScenePair, seed: u64) -> RegistrationResult {
        let initial = simulate_prior_transform(&scene.ground_truth, &self.config.prior, seed);
        self.register_from(scene, &initial)
    }

    /// Registers one pair starting from `initial_prior`.
    pub fn register_from(&self, scene: &ScenePair, initial_prior: &RigidTransform) -> RegistrationResult {
        let src = prepare_cloud(&scene.source, &self.config);
        let dst = prepare_cloud(&scene.target, &self.config);
        let target_tree = KdTree::new(scene.target.points());
        let fitness_of = |t: &RigidTransform| cloud_fitness(&scene.source, &target_tree, t, self.config.lgr.inlier_radius);
        let metrics_of = |t: &RigidTransform, fine: &[FineMatch]| {
            let pairs: Vec<(usize, usize)> = fine.iter().map(|m| (m.src, m.dst)).collect();
            compute_metrics(t, &scene.ground_truth, &scene.source, &scene.target, &pairs, &self.config.thresholds)
        };
        let mut result = RegistrationResult {
            transform: *initial_prior,
            selected: None,
            fitness: fitness_of(initial_prior),
            inlier_count: 0,
            failed: false,
            failure: None,
            initial_prior: *initial_prior,
            per_iteration: Vec::new(),
            metrics: metrics_of(initial_prior, &[]),
            routing_history: RoutingHistory::default(),
            coarse: Vec::new(),
            fine: Vec::new(),
        };
        let mut prior = *initial_prior;
        for iteration in 0..self.config.iterations {
            let out = match self.run_iteration(scene, &src, &dst, &prior) {
                Ok(out) => out,
                Err(e) => {
                    debug!("iteration {iteration} failed: {e}");
                    result.failed = true;
                    result.failure = Some(e.to_string());
                    break;
                }
            };
            let estimate = out.lgr.transform;
            let fitness = fitness_of(&estimate);
            let metrics = metrics_of(&estimate, &out.fine);
            debug!("iteration {iteration}: {} inliers, fitness {fitness:.3}", out.lgr.inlier_count);
            result.per_iteration.push(IterationRecord {
                prior_transform: prior,
                transform: estimate,
                inlier_count: out.lgr.inlier_count,
                prior_pairs: out.prior.len(),
                coarse_matches: out.coarse.len(),
                fine_matches: out.fine.len(),
                fitness,
                metrics,
            });
            let better = fitness >= result.fitness;
            if better {
                result.transform = estimate;
                result.selected = Some(iteration);
                result.fitness = fitness;
                result.inlier_count = out.lgr.inlier_count;
                result.metrics = metrics;
            }
            if better || result.selected.is_none() {
                if !better {
                    result.metrics = metrics_of(&result.transform, &out.fine);
                }
                result.routing_history = out.history;
                result.coarse = out.coarse;
                result.fine = out.fine;
            }
            let converged = estimate.rotation_error_deg(&prior) < self.config.convergence_rotation_deg
                && estimate.translation_error(&prior) < self.config.convergence_translation;
            prior = estimate;
            if converged {
                break;
            }
        }
        result
    }
}

/// Share of `source` points that land within `radius` of a target point
/// under `transform`.
pub fn cloud_fitness(source: &PointCloud, target: &KdTree, transform: &RigidTransform, radius: f64) -> f64 {
    if source.is_empty() {
        return 0.0;
    }
    let hits = source.points().iter().filter(|p| target.any_within(&transform.apply(p), radius)).count();
    hits as f64 / source.len() as f64
}

/// Builds a [`Registrar`] for `config` and registers one pair.
pub fn register_pair(scene: &ScenePair, config: &PipelineConfig, seed: u64) -> Result<RegistrationResult, RegisterError> {
    Ok(Registrar::new(config.clone())?.register(scene, seed))
}
