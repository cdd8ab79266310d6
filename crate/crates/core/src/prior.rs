//! Prior superpoint correspondences.
//!
//! A prior transform (simulated here as ground truth plus a bounded random
//! perturbation) is used to measure how much each source patch overlaps each
//! target patch. Entries above `tau_o` become the prior correspondences that
//! guide routing.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{PointCloud, RigidTransform};
use crate::scene::SuperpointSet;
use crate::spatial::KdTree;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PriorError {
    #[error("no overlap ratio exceeds tau_o = {tau_o}")]
    EmptyPrior { tau_o: f64 },
    #[error("invalid prior configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Overlap-ratio threshold; pairs must exceed it strictly.
    pub tau_o: f64,
    /// Rotation perturbation magnitude, degrees.
    pub rotation_noise: f64,
    /// Translation perturbation magnitude, meters.
    pub translation_noise: f64,
    /// Radius for patch overlap; `None` means the superpoint voxel size.
    pub patch_inlier_radius: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            tau_o: 0.0,
            rotation_noise: 10.0,
            translation_noise: 0.2,
            patch_inlier_radius: None,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), PriorError> {
        if !(0.0..1.0).contains(&self.tau_o) {
            return Err(PriorError::Config(format!("tau_o {} outside [0, 1)", self.tau_o)));
        }
        if !(self.rotation_noise >= 0.0 && self.translation_noise >= 0.0) {
            return Err(PriorError::Config("noise magnitudes must be non-negative".into()));
        }
        if self.patch_inlier_radius.is_some_and(|r| !(r > 0.0)) {
            return Err(PriorError::Config("patch_inlier_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth perturbed by a rotation of exactly `rotation_noise` degrees
/// about a uniformly random axis and a translation of exactly
/// `translation_noise` meters in a uniformly random direction.
pub fn simulate_prior_transform(ground_truth: &RigidTransform, config: &PriorConfig, seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |rng: &mut ChaCha8Rng| loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            break v / n;
        }
    };
    if config.rotation_noise == 0.0 && config.translation_noise == 0.0 {
        return *ground_truth;
    }
    let axis = unit(&mut rng);
    let direction = unit(&mut rng);
    let perturbation = RigidTransform::from_axis_angle(
        &axis,
        config.rotation_noise.to_radians(),
        direction * config.translation_noise,
    );
    perturbation.compose(ground_truth)
}

/// Entry `(i, j)` is the fraction of raw points of source patch `i` whose
/// image under `prior` lies within `radius` of some raw point of target
/// patch `j`.
pub fn overlap_ratio_matrix(
    src_cloud: &PointCloud,
    src_sp: &SuperpointSet,
    dst_cloud: &PointCloud,
    dst_sp: &SuperpointSet,
    prior: &RigidTransform,
    radius: f64,
) -> Array2<f64> {
    assert!(radius > 0.0, "overlap radius must be positive");
    let dst_owner = dst_sp.point_to_patch(dst_cloud.len());
    let tree = KdTree::new(dst_cloud.points());
    let mut ratios = Array2::zeros((src_sp.len(), dst_sp.len()));
    let mut touched: Vec<usize> = Vec::new();
    let mut seen = vec![false; dst_sp.len()];
    for (i, members) in src_sp.patch_members.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut counts = vec![0u32; dst_sp.len()];
        for &p in members {
            let q = prior.apply(&src_cloud.points()[p]);
            touched.clear();
            // each target patch counts once per source point
            tree.for_each_within(&q, radius, |idx, _| {
                let patch = dst_owner[idx];
                if !seen[patch] {
                    seen[patch] = true;
                    touched.push(patch);
                }
            });
            for &j in &touched {
                counts[j] += 1;
                seen[j] = false;
            }
        }
        let n = members.len() as f64;
        for (j, c) in counts.into_iter().enumerate() {
            if c > 0 {
                ratios[[i, j]] = c as f64 / n;
            }
        }
    }
    ratios
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorCorrespondences {
    /// `(source superpoint, target superpoint)` in row-major order.
    pub pairs: Vec<(usize, usize)>,
    pub ratios: Vec<f64>,
    /// For each source superpoint, the positions in `pairs` that reference it.
    #[serde(skip)]
    pub source_positions: Vec<Vec<usize>>,
    /// For each target superpoint, the positions in `pairs` that reference it.
    #[serde(skip)]
    pub target_positions: Vec<Vec<usize>>,
}

impl PriorCorrespondences {
    /// No anchors at all; every superpoint takes the non-anchor code.
    pub fn empty(num_source: usize, num_target: usize) -> Self {
        PriorCorrespondences {
            pairs: Vec::new(),
            ratios: Vec::new(),
            source_positions: vec![Vec::new(); num_source],
            target_positions: vec![Vec::new(); num_target],
        }
    }

    pub fn from_pairs(pairs: Vec<(usize, usize)>, ratios: Vec<f64>, num_source: usize, num_target: usize) -> Self {
        assert_eq!(pairs.len(), ratios.len(), "one ratio per pair");
        let mut out = Self::empty(num_source, num_target);
        for (pos, &(i, j)) in pairs.iter().enumerate() {
            out.source_positions[i].push(pos);
            out.target_positions[j].push(pos);
        }
        out.pairs = pairs;
        out.ratios = ratios;
        out
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// All `(i, j)` with `o_hat[i, j] > tau_o`, row-major.
pub fn select_prior_correspondences(o_hat: &Array2<f64>, tau_o: f64) -> Result<PriorCorrespondences, PriorError> {
    let (n, m) = o_hat.dim();
    let mut pairs = Vec::new();
    let mut ratios = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let r = o_hat[[i, j]];
            if r > tau_o {
                pairs.push((i, j));
                ratios.push(r);
            }
        }
    }
    if pairs.is_empty() {
        return Err(PriorError::EmptyPrior { tau_o });
    }
    Ok(PriorCorrespondences::from_pairs(pairs, ratios, n, m))
}
