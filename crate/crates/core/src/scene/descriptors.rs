//! Training-free descriptors standing in for a learned backbone.
//!
//! Superpoint descriptors are eigenvalue statistics of the local covariance
//! at a few radii, expressed in the local principal frame so they do not
//! depend on the cloud's pose, then lifted to the model width by a fixed
//! seeded Gaussian map. Point descriptors are sorted k-nearest-neighbour
//! distances.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SuperpointSet;
use crate::geom::PointCloud;
use crate::spatial::KdTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    /// Base neighbourhood radius, meters.
    pub radius: f64,
    /// Multipliers of `radius` at which the local shape is measured.
    pub scales: Vec<f64>,
    /// Width `d` of the lifted descriptor.
    pub width: usize,
    pub projection_seed: u64,
    /// Neighbours in the per-point distance signature.
    pub point_neighbors: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            radius: 0.3,
            scales: vec![1.0, 2.0, 3.0],
            width: 64,
            projection_seed: 0x5eed,
            point_neighbors: 8,
        }
    }
}

/// Shape statistics of one neighbourhood. Eigenvalues `λ₁ ≥ λ₂ ≥ λ₃` of the
/// covariance give the ratios; `height_variance` is `λ₃/r²`, the spread
/// along the local normal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LocalShape {
    pub linearity: f64,
    pub planarity: f64,
    pub sphericity: f64,
    pub omnivariance: f64,
    pub height_variance: f64,
    pub density: f64,
    /// Distance from the query centre to the neighbourhood centroid, over `r`.
    pub offset: f64,
    pub count: usize,
}

impl LocalShape {
    pub const RAW_LEN: usize = 7;

    /// Roughly zero-centred feature vector.
    fn raw(&self) -> [f64; Self::RAW_LEN] {
        [
            2.0 * self.linearity - 1.0,
            2.0 * self.planarity - 1.0,
            4.0 * self.sphericity - 1.0,
            6.0 * self.omnivariance - 1.0,
            20.0 * self.height_variance - 1.0,
            self.density,
            2.0 * self.offset - 1.0,
        ]
    }
}

/// Shape of `neighbors` around `center`. Fewer than three points yield the
/// zero-neighbourhood fallback (all ratios zero).
pub fn local_shape(neighbors: &[Vector3<f64>], center: &Vector3<f64>, radius: f64) -> LocalShape {
    let count = neighbors.len();
    let density = (1.0 + count as f64).ln() / 4.0 - 1.0;
    if count < 3 {
        return LocalShape { density, count, ..Default::default() };
    }
    let mean: Vector3<f64> = neighbors.iter().sum::<Vector3<f64>>() / count as f64;
    let mut cov = Matrix3::zeros();
    for p in neighbors {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= count as f64;
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let (l1, l2, l3) = (ev[0], ev[1], ev[2]);
    let offset = ((mean - center).norm() / radius).min(1.0);
    if l1 <= f64::MIN_POSITIVE {
        return LocalShape { density, offset, count, ..Default::default() };
    }
    let sum = l1 + l2 + l3;
    LocalShape {
        linearity: (l1 - l2) / l1,
        planarity: (l2 - l3) / l1,
        sphericity: l3 / l1,
        omnivariance: ((l1 / sum) * (l2 / sum) * (l3 / sum)).cbrt(),
        height_variance: l3 / (radius * radius),
        density,
        offset,
        count,
    }
}

fn projection(config: &DescriptorConfig) -> Array2<f64> {
    let raw_len = LocalShape::RAW_LEN * config.scales.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.projection_seed);
    let normal = Normal::new(0.0, (1.0 / raw_len as f64).sqrt()).expect("finite std");
    Array2::from_shape_fn((config.width, raw_len), |_| normal.sample(&mut rng))
}

/// Fills `sp.features` with one lifted descriptor per superpoint.
///
/// # Panics
/// If `radius` is not positive or the width is below 8.
pub fn compute_descriptors(cloud: &PointCloud, sp: &SuperpointSet, config: &DescriptorConfig) -> SuperpointSet {
    assert!(config.radius > 0.0, "descriptor radius must be positive");
    assert!(config.width >= 8, "descriptor width must be at least 8");
    let tree = KdTree::new(cloud.points());
    let lift = projection(config);
    let raw_len = lift.ncols();
    let mut features = Array2::zeros((sp.len(), config.width));
    let mut raw = vec![0.0; raw_len];
    let mut neighbors = Vec::new();
    for (row, center) in sp.superpoints.iter().enumerate() {
        for (s, scale) in config.scales.iter().enumerate() {
            let r = config.radius * scale;
            neighbors.clear();
            tree.for_each_within(center, r, |i, _| neighbors.push(i));
            // fixed order keeps the covariance sums reproducible
            neighbors.sort_unstable();
            let pts: Vec<Vector3<f64>> = neighbors.iter().map(|&i| cloud.points()[i]).collect();
            let shape = local_shape(&pts, center, r);
            raw[s * LocalShape::RAW_LEN..(s + 1) * LocalShape::RAW_LEN].copy_from_slice(&shape.raw());
        }
        for k in 0..config.width {
            features[[row, k]] = (0..raw_len).map(|j| lift[[k, j]] * raw[j]).sum();
        }
    }
    SuperpointSet { features, ..sp.clone() }
}

/// Sorted distances from each point to its `k` nearest other points
/// (`len × k`); missing neighbours are padded with the last distance.
pub fn point_descriptors(cloud: &PointCloud, k: usize) -> Array2<f64> {
    let tree = KdTree::new(cloud.points());
    let mut out = Array2::zeros((cloud.len(), k));
    for (i, p) in cloud.points().iter().enumerate() {
        let nn = tree.k_nearest(p, k + 1);
        let dists: Vec<f64> = nn.iter().filter(|(j, _)| *j != i).map(|(_, d2)| d2.sqrt()).take(k).collect();
        let last = dists.last().copied().unwrap_or(0.0);
        for c in 0..k {
            out[[i, c]] = dists.get(c).copied().unwrap_or(last);
        }
    }
    out
}
