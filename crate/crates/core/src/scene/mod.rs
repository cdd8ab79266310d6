//! Synthetic indoor-style scenes with known ground truth, plus the
//! superpoint/descriptor front end and point-cloud file IO.
//!
//! A scene is a union of large planes (floor and two walls), boxes and
//! cylinders sampled by area. Source and target are two half-space crops of
//! the same sample set; the target is moved by the ground-truth transform and
//! each side gets its own Gaussian jitter.

mod descriptors;
mod io;
mod superpoints;

pub use descriptors::{compute_descriptors, local_shape, point_descriptors, DescriptorConfig, LocalShape};
pub use io::{read_cloud, read_ply, write_cloud, write_ply, IoError, PlyCloud};
pub use superpoints::{voxel_downsample, SuperpointSet};

use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{GeomError, PointCloud, RigidTransform};
use crate::spatial::KdTree;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Points sampled on the full scene before cropping.
    pub points: usize,
    /// Target fraction of source points that overlap the target.
    pub overlap: f64,
    /// Standard deviation of the per-coordinate jitter, meters.
    pub noise_sigma: f64,
    /// Side length of the square floor, meters.
    pub extent: f64,
    pub boxes: usize,
    pub cylinders: usize,
    /// Radius used to decide whether a source point overlaps the target, meters.
    pub overlap_radius: f64,
    /// Largest translation component of the ground truth, meters.
    pub max_translation: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            points: 2000,
            overlap: 0.5,
            noise_sigma: 0.002,
            extent: 2.0,
            boxes: 4,
            cylinders: 3,
            overlap_radius: 0.1,
            max_translation: 1.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.points < 100 {
            return Err(SceneError::Config(format!("need at least 100 points, got {}", self.points)));
        }
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return Err(SceneError::Config(format!("overlap target {} outside (0, 1]", self.overlap)));
        }
        let positive = [self.extent, self.overlap_radius];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SceneError::Config("extent and overlap_radius must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) || !(self.max_translation >= 0.0) {
            return Err(SceneError::Config("noise_sigma and max_translation must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps source coordinates into the target frame.
    pub ground_truth: RigidTransform,
    pub overlap_fraction: f64,
}

/// Fraction of source points whose ground-truth image has a target point
/// within `radius`.
pub fn measure_overlap(source: &PointCloud, target: &PointCloud, ground_truth: &RigidTransform, radius: f64) -> f64 {
    let tree = KdTree::new(target.points());
    let hits = source.points().iter().filter(|p| tree.any_within(&ground_truth.apply(p), radius)).count();
    hits as f64 / source.len() as f64
}

enum Surface {
    /// `origin + u·a + v·b` for `u, v ∈ [0, 1]`.
    Rect { origin: Vector3<f64>, a: Vector3<f64>, b: Vector3<f64> },
    /// Lateral surface of an upright cylinder.
    Tube { center: Vector3<f64>, radius: f64, height: f64 },
    /// Top cap of an upright cylinder.
    Disk { center: Vector3<f64>, radius: f64 },
}

impl Surface {
    fn area(&self) -> f64 {
        match self {
            Surface::Rect { a, b, .. } => a.cross(b).norm(),
            Surface::Tube { radius, height, .. } => 2.0 * std::f64::consts::PI * radius * height,
            Surface::Disk { radius, .. } => std::f64::consts::PI * radius * radius,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Vector3<f64> {
        match self {
            Surface::Rect { origin, a, b } => origin + a * rng.random::<f64>() + b * rng.random::<f64>(),
            Surface::Tube { center, radius, height } => {
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                center + Vector3::new(radius * phi.cos(), radius * phi.sin(), height * rng.random::<f64>())
            }
            Surface::Disk { center, radius } => {
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let r = radius * rng.random::<f64>().sqrt();
                center + Vector3::new(r * phi.cos(), r * phi.sin(), 0.0)
            }
        }
    }
}

fn build_surfaces(config: &SceneConfig, rng: &mut impl Rng) -> Vec<Surface> {
    let e = config.extent;
    let h = 0.5 * e;
    let mut surfaces = vec![
        Surface::Rect { origin: Vector3::zeros(), a: Vector3::new(e, 0.0, 0.0), b: Vector3::new(0.0, e, 0.0) },
        Surface::Rect { origin: Vector3::zeros(), a: Vector3::new(0.0, e, 0.0), b: Vector3::new(0.0, 0.0, h) },
        Surface::Rect { origin: Vector3::zeros(), a: Vector3::new(e, 0.0, 0.0), b: Vector3::new(0.0, 0.0, h) },
    ];
    for _ in 0..config.boxes {
        let size = Vector3::new(
            rng.random_range(0.1..0.25) * e,
            rng.random_range(0.1..0.25) * e,
            rng.random_range(0.08..0.3) * e,
        );
        let yaw = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
        let (s, c) = yaw.sin_cos();
        let ax = Vector3::new(c, s, 0.0) * size.x;
        let ay = Vector3::new(-s, c, 0.0) * size.y;
        let az = Vector3::new(0.0, 0.0, size.z);
        let o = Vector3::new(rng.random_range(0.15..0.75) * e, rng.random_range(0.15..0.75) * e, 0.0);
        surfaces.push(Surface::Rect { origin: o, a: ax, b: az });
        surfaces.push(Surface::Rect { origin: o, a: ay, b: az });
        surfaces.push(Surface::Rect { origin: o + ax, a: ay, b: az });
        surfaces.push(Surface::Rect { origin: o + ay, a: ax, b: az });
        surfaces.push(Surface::Rect { origin: o + az, a: ax, b: ay });
    }
    for _ in 0..config.cylinders {
        let radius = rng.random_range(0.04..0.1) * e;
        let height = rng.random_range(0.1..0.4) * e;
        let center = Vector3::new(rng.random_range(0.15..0.85) * e, rng.random_range(0.15..0.85) * e, 0.0);
        surfaces.push(Surface::Tube { center, radius, height });
        surfaces.push(Surface::Disk { center: center + Vector3::new(0.0, 0.0, height), radius });
    }
    surfaces
}

fn sample_surfaces(surfaces: &[Surface], count: usize, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let areas: Vec<f64> = surfaces.iter().map(Surface::area).collect();
    let total: f64 = areas.iter().sum();
    (0..count)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut idx = surfaces.len() - 1;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    idx = i;
                    break;
                }
                pick -= a;
            }
            surfaces[idx].sample(rng)
        })
        .collect()
}

fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let q = nalgebra::Quaternion::new(normal.sample(rng), normal.sample(rng), normal.sample(rng), normal.sample(rng));
    UnitQuaternion::from_quaternion(q)
}

fn jitter(points: &[Vector3<f64>], sigma: f64, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    if sigma == 0.0 {
        return points.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    points
        .iter()
        .map(|p| p + Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
        .collect()
}

/// Splits the sorted projections so a nominal fraction `f` of the source
/// lies in the shared band. Returns (source indices, target indices).
fn crop(projections: &[f64], f: f64) -> (Vec<usize>, Vec<usize>) {
    let n = projections.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| projections[a].total_cmp(&projections[b]).then(a.cmp(&b)));
    // source keeps the lowest fraction u, target the highest u; band = 2u − 1
    let u = 1.0 / (2.0 - f);
    let keep = ((u * n as f64).round() as usize).clamp(1, n);
    let src = order[..keep].to_vec();
    let tgt = order[n - keep..].to_vec();
    (src, tgt)
}

/// Deterministic synthetic pair for `seed`.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<ScenePair, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surfaces = build_surfaces(config, &mut rng);
    let base = sample_surfaces(&surfaces, config.points, &mut rng);

    let rotation = random_rotation(&mut rng);
    let translation = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0) * config.max_translation);
    let ground_truth = RigidTransform::new(*rotation.to_rotation_matrix().matrix(), translation)?;

    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let direction = Vector3::new(phi.cos(), phi.sin(), 0.0);
    let projections: Vec<f64> = base.iter().map(|p| direction.dot(p)).collect();

    let mut shuffle: Vec<usize> = (0..base.len()).collect();
    shuffle.shuffle(&mut rng);
    let mut target_shuffle = shuffle.clone();
    target_shuffle.shuffle(&mut rng);
    let noise_seed: u64 = rng.random();

    let assemble = |nominal: f64| -> Result<ScenePair, SceneError> {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let (src_idx, tgt_idx) = if nominal >= 1.0 {
            (shuffle.clone(), shuffle.clone())
        } else {
            let (mut s, mut t) = crop(&projections, nominal);
            // reorder by the shuffles so file order carries no geometry
            let rank = |perm: &[usize]| {
                let mut r = vec![0usize; perm.len()];
                for (pos, &i) in perm.iter().enumerate() {
                    r[i] = pos;
                }
                r
            };
            let (rs, rt) = (rank(&shuffle), rank(&target_shuffle));
            s.sort_by_key(|&i| rs[i]);
            t.sort_by_key(|&i| rt[i]);
            (s, t)
        };
        let src_pts: Vec<Vector3<f64>> = src_idx.iter().map(|&i| base[i]).collect();
        let tgt_pts: Vec<Vector3<f64>> = tgt_idx.iter().map(|&i| ground_truth.apply(&base[i])).collect();
        let source = PointCloud::new(jitter(&src_pts, config.noise_sigma, &mut noise_rng))?;
        let target = PointCloud::new(jitter(&tgt_pts, config.noise_sigma, &mut noise_rng))?;
        let overlap_fraction = measure_overlap(&source, &target, &ground_truth, config.overlap_radius);
        Ok(ScenePair { source, target, ground_truth, overlap_fraction })
    };

    if config.overlap >= 1.0 {
        return assemble(1.0);
    }
    // the measured overlap exceeds the nominal band fraction near the band
    // edges; bisect the nominal value until the measurement lands close
    let (mut lo, mut hi) = (0.0f64, config.overlap);
    let mut best = assemble(config.overlap)?;
    for _ in 0..14 {
        let err = best.overlap_fraction - config.overlap;
        if err.abs() <= 0.02 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let candidate = assemble(mid)?;
        if candidate.overlap_fraction > config.overlap {
            hi = mid;
        } else {
            lo = mid;
        }
        if (candidate.overlap_fraction - config.overlap).abs() < err.abs() {
            best = candidate;
        }
    }
    if (best.overlap_fraction - config.overlap).abs() > 0.1 {
        return Err(SceneError::Config(format!(
            "overlap target {} unreachable (closest measured {:.3})",
            config.overlap, best.overlap_fraction
        )));
    }
    Ok(best)
}
