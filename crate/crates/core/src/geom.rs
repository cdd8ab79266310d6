//! Point sets, rigid transforms, weighted Procrustes and registration metrics.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::{sq_dist, KdTree};

/// Tolerance on `RᵀR = I` and `det R = 1` when validating rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Ratio below which the second singular value of the cross-covariance marks
/// a rank ≤ 1 (collinear or coincident) configuration.
pub const DEGENERACY_RATIO: f64 = 1e-10;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GeomError {
    #[error("point cloud must contain at least one point")]
    EmptyCloud,
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("matrix is not a proper rotation (orthogonality error {orthogonality:.3e}, det {det})")]
    NotARotation { orthogonality: f64, det: f64 },
    #[error("invalid procrustes input: {0}")]
    InvalidInput(String),
    #[error("degenerate configuration: correspondences are collinear or coincident")]
    DegenerateConfiguration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeomError> {
        if points.is_empty() {
            return Err(GeomError::EmptyCloud);
        }
        if let Some(index) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeomError::NonFinite { index });
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Vector3<f64>> {
        self.points
    }
}

/// A proper rigid motion `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Row-major wire form used for JSON.
#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        TransformRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = GeomError;

    fn try_from(repr: TransformRepr) -> Result<Self, Self::Error> {
        let rows = repr.rotation;
        let rotation = Matrix3::from_row_slice(&[
            rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0], rows[2][1], rows[2][2],
        ]);
        RigidTransform::new(rotation, Vector3::from(repr.translation))
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let orthogonality = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if !orthogonality.is_finite()
            || orthogonality > ROTATION_TOLERANCE
            || (det - 1.0).abs() > ROTATION_TOLERANCE
            || !translation.iter().all(|c| c.is_finite())
        {
            return Err(GeomError::NotARotation { orthogonality, det });
        }
        Ok(RigidTransform { rotation, translation })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    /// A zero axis yields the pure translation.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = match Unit::try_new(*axis, 1e-12) {
            Some(axis) => *Rotation3::from_axis_angle(&axis, angle).matrix(),
            None => Matrix3::identity(),
        };
        RigidTransform { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Geodesic angle between the two rotations, in degrees.
    pub fn rotation_error_deg(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(other.rotation.transpose() * self.rotation)).to_degrees()
    }

    pub fn translation_error(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Angle of a rotation matrix. Uses `atan2(sin, cos)` rather than the bare
/// arccos of the trace so small angles keep full precision.
fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = (r.trace() - 1.0) / 2.0;
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = skew.norm() / 2.0;
    sin.atan2(cos)
}

pub fn apply_transform(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| transform.apply(p)).collect(),
    }
}

/// Closed-form minimiser of `Σ wᵢ‖R·srcᵢ + t − dstᵢ‖²` over proper rotations.
///
/// The SVD of the weighted cross-covariance gives the rotation; the singular
/// direction with the smallest value is flipped when the naive solution is a
/// reflection. Coplanar inputs (rank 2) are solvable this way; rank ≤ 1 is
/// reported as [`GeomError::DegenerateConfiguration`].
pub fn weighted_procrustes(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: &[f64],
) -> Result<RigidTransform, GeomError> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(GeomError::InvalidInput(format!(
            "length mismatch: {} source, {} target, {} weights",
            src.len(),
            dst.len(),
            weights.len()
        )));
    }
    if src.len() < 3 {
        return Err(GeomError::InvalidInput(format!("need at least 3 correspondences, got {}", src.len())));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(GeomError::InvalidInput("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(GeomError::InvalidInput("weights sum to zero".into()));
    }

    let mut src_mean = Vector3::zeros();
    let mut dst_mean = Vector3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        src_mean += s * *w;
        dst_mean += d * *w;
    }
    src_mean /= total;
    dst_mean /= total;

    let mut cov = Matrix3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        cov += (d - dst_mean) * (s - src_mean).transpose() * (*w / total);
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeomError::DegenerateConfiguration),
    };
    let mut sv: Vec<(usize, f64)> = svd.singular_values.iter().copied().enumerate().collect();
    sv.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (largest, second) = (sv[0].1, sv[1].1);
    if !(largest > 0.0) || second < DEGENERACY_RATIO * largest {
        return Err(GeomError::DegenerateConfiguration);
    }

    // cov = U Σ Vᵀ maps source deviations to target deviations, so R = U D Vᵀ
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        let smallest = sv[2].0;
        d[(smallest, smallest)] = -1.0;
    }
    let rotation = u * d * v_t;
    let translation = dst_mean - rotation * src_mean;
    RigidTransform::new(rotation, translation)
}

/// Thresholds of the evaluation protocol; all overridable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricThresholds {
    /// A correspondence is an inlier when its ground-truth residual is below this (m).
    pub inlier_distance: f64,
    /// A pair counts towards feature matching recall when its inlier ratio exceeds this.
    pub fmr_inlier_ratio: f64,
    /// A pair counts as registered when its RMSE is below this (m).
    pub rr_rmse: f64,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        MetricThresholds {
            inlier_distance: 0.1,
            fmr_inlier_ratio: 0.05,
            rr_rmse: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationMetrics {
    /// Relative rotation error, degrees.
    pub rre: f64,
    /// Relative translation error, meters.
    pub rte: f64,
    /// Symmetric mean squared nearest-neighbour distance, m².
    pub chamfer: f64,
    pub inlier_ratio: f64,
    /// RMSE of the estimate over source points that overlap the target under ground truth, m.
    pub rmse: f64,
}

pub fn compute_metrics(
    estimated: &RigidTransform,
    ground_truth: &RigidTransform,
    src: &PointCloud,
    dst: &PointCloud,
    correspondences: &[(usize, usize)],
    thresholds: &MetricThresholds,
) -> RegistrationMetrics {
    let rre = estimated.rotation_error_deg(ground_truth);
    let rte = estimated.translation_error(ground_truth);

    let tau2 = thresholds.inlier_distance * thresholds.inlier_distance;
    let inliers = correspondences
        .iter()
        .filter(|&&(i, j)| sq_dist(&ground_truth.apply(&src.points[i]), &dst.points[j]) < tau2)
        .count();
    let inlier_ratio = if correspondences.is_empty() {
        0.0
    } else {
        inliers as f64 / correspondences.len() as f64
    };

    let dst_tree = KdTree::new(&dst.points);
    let mut overlap_sq = 0.0;
    let mut overlap_count = 0usize;
    let mut all_sq = 0.0;
    for p in &src.points {
        let gt = ground_truth.apply(p);
        let err = sq_dist(&estimated.apply(p), &gt);
        all_sq += err;
        if dst_tree.nearest(&gt).is_some_and(|(_, d2)| d2 < tau2) {
            overlap_sq += err;
            overlap_count += 1;
        }
    }
    let rmse = if overlap_count > 0 {
        (overlap_sq / overlap_count as f64).sqrt()
    } else {
        (all_sq / src.len() as f64).sqrt()
    };

    let registered = apply_transform(src, estimated);
    let reg_tree = KdTree::new(&registered.points);
    let forward: f64 = registered
        .points
        .iter()
        .map(|p| dst_tree.nearest(p).map_or(0.0, |(_, d2)| d2))
        .sum::<f64>()
        / registered.len() as f64;
    let backward: f64 =
        dst.points.iter().map(|q| reg_tree.nearest(q).map_or(0.0, |(_, d2)| d2)).sum::<f64>() / dst.len() as f64;

    RegistrationMetrics {
        rre,
        rte,
        chamfer: forward + backward,
        inlier_ratio,
        rmse,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        RigidTransform::from_axis_angle(&axis, rng.random_range(0.0..3.1), t)
    }

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cloud_rejects_empty_and_nan() {
        assert_eq!(PointCloud::new(vec![]), Err(GeomError::EmptyCloud));
        assert_eq!(
            PointCloud::new(vec![Vector3::zeros(), Vector3::new(0.0, f64::NAN, 0.0)]),
            Err(GeomError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(RigidTransform::new(m, Vector3::zeros()), Err(GeomError::NotARotation { .. })));
    }

    #[test]
    fn identity_leaves_cloud_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = random_cloud(&mut rng, 20);
        assert_eq!(apply_transform(&c, &RigidTransform::identity()), c);
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_axis_angle(&Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let c = PointCloud::new(vec![Vector3::x()]).unwrap();
        let out = apply_transform(&c, &t);
        assert_abs_diff_eq!(out.points()[0], Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn transform_then_inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cloud(&mut rng, 50);
        let t = random_transform(&mut rng);
        let back = apply_transform(&apply_transform(&c, &t), &t.inverse());
        for (a, b) in back.points().iter().zip(c.points()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn serde_round_trip_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_transform(&mut rng);
        let json = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        let bad = r#"{"rotation":[[2,0,0],[0,1,0],[0,0,1]],"translation":[0,0,0]}"#;
        assert!(serde_json::from_str::<RigidTransform>(bad).is_err());
    }

    #[test]
    fn procrustes_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_cloud(&mut rng, 10);
        let t = weighted_procrustes(c.points(), c.points(), &[1.0; 10]).unwrap();
        assert!(t.rotation_error_deg(&RigidTransform::identity()) < 1e-9);
        assert!(t.translation().norm() < 1e-9);
    }

    #[test]
    fn procrustes_recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let c = random_cloud(&mut rng, 12);
            let gt = random_transform(&mut rng);
            let moved = apply_transform(&c, &gt);
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..2.0)).collect();
            let est = weighted_procrustes(c.points(), moved.points(), &w).unwrap();
            assert_abs_diff_eq!(est.rotation(), gt.rotation(), epsilon = 1e-9);
            assert_abs_diff_eq!(est.translation(), gt.translation(), epsilon = 1e-9);
        }
    }

    #[test]
    fn procrustes_handles_coplanar_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vector3<f64>> =
            (0..10).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0)).collect();
        let gt = random_transform(&mut rng);
        let moved: Vec<_> = pts.iter().map(|p| gt.apply(p)).collect();
        let est = weighted_procrustes(&pts, &moved, &[1.0; 10]).unwrap();
        assert!(est.rotation_error_deg(&gt) < 1e-7);
    }

    #[test]
    fn procrustes_degenerate_inputs() {
        let same = vec![Vector3::new(1.0, 2.0, 3.0); 5];
        assert_eq!(weighted_procrustes(&same, &same, &[1.0; 5]), Err(GeomError::DegenerateConfiguration));
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(weighted_procrustes(&line, &line, &[1.0; 5]), Err(GeomError::DegenerateConfiguration));
        assert!(matches!(
            weighted_procrustes(&line[..2], &line[..2], &[1.0; 2]),
            Err(GeomError::InvalidInput(_))
        ));
        assert!(matches!(weighted_procrustes(&line, &line, &[0.0; 5]), Err(GeomError::InvalidInput(_))));
    }

    #[test]
    fn reflection_guard_on_near_degenerate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let n = rng.random_range(3..8);
            // nearly collinear or nearly planar sources with noisy, partly mirrored targets
            let src: Vec<Vector3<f64>> = (0..n)
                .map(|_| {
                    let s = rng.random_range(-1.0..1.0);
                    Vector3::new(s, s * 0.5, 0.0)
                        + Vector3::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3), rng.random_range(-1e-6..1e-6))
                })
                .collect();
            let dst: Vec<Vector3<f64>> = src
                .iter()
                .map(|p| Vector3::new(p.x, p.y, -p.z) + Vector3::new(rng.random_range(-0.1..0.1), 0.0, rng.random_range(-0.1..0.1)))
                .collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            if let Ok(t) = weighted_procrustes(&src, &dst, &w) {
                assert!((t.rotation().determinant() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn metrics_zero_for_perfect_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let src = random_cloud(&mut rng, 30);
        let gt = random_transform(&mut rng);
        let dst = apply_transform(&src, &gt);
        let corr: Vec<(usize, usize)> = (0..30).map(|i| (i, i)).collect();
        let m = compute_metrics(&gt, &gt, &src, &dst, &corr, &MetricThresholds::default());
        assert!(m.rre < 1e-9 && m.rte < 1e-9);
        assert_eq!(m.inlier_ratio, 1.0);
        assert!(m.rmse < 1e-12);
        assert!(m.chamfer < 1e-20);
    }

    #[test]
    fn five_degree_rotation_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let src = random_cloud(&mut rng, 10);
        let gt = random_transform(&mut rng);
        let off = RigidTransform::from_axis_angle(&Vector3::z(), 5f64.to_radians(), Vector3::zeros());
        let est = RigidTransform::new(off.rotation() * gt.rotation(), *gt.translation()).unwrap();
        let dst = apply_transform(&src, &gt);
        let m = compute_metrics(&est, &gt, &src, &dst, &[], &MetricThresholds::default());
        assert_abs_diff_eq!(m.rre, 5.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.rte, 0.0, epsilon = 1e-12);
        assert_eq!(m.inlier_ratio, 0.0);
    }

    #[test]
    fn inlier_ratio_counts_threshold() {
        let src = PointCloud::new(vec![Vector3::zeros(), Vector3::x()]).unwrap();
        let dst = PointCloud::new(vec![Vector3::new(0.05, 0.0, 0.0), Vector3::new(1.5, 0.0, 0.0)]).unwrap();
        let gt = RigidTransform::identity();
        let m = compute_metrics(&gt, &gt, &src, &dst, &[(0, 0), (1, 1)], &MetricThresholds::default());
        assert_eq!(m.inlier_ratio, 0.5);
    }

    proptest! {
        #[test]
        fn composition_matches_sequential_application(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_cloud(&mut rng, 8);
            let t1 = random_transform(&mut rng);
            let t2 = random_transform(&mut rng);
            let seq = apply_transform(&apply_transform(&c, &t1), &t2);
            let composed = apply_transform(&c, &t2.compose(&t1));
            for (a, b) in seq.points().iter().zip(composed.points()) {
                prop_assert!((a - b).amax() < 1e-9);
            }
        }

        #[test]
        fn procrustes_invariant_to_weight_scale(seed in any::<u64>(), scale in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = random_cloud(&mut rng, 9);
            let dst = random_cloud(&mut rng, 9);
            let w: Vec<f64> = (0..9).map(|_| rng.random_range(0.1..1.0)).collect();
            let ws: Vec<f64> = w.iter().map(|x| x * scale).collect();
            let a = weighted_procrustes(src.points(), dst.points(), &w).unwrap();
            let b = weighted_procrustes(src.points(), dst.points(), &ws).unwrap();
            prop_assert!((a.rotation() - b.rotation()).amax() < 1e-9);
            prop_assert!((a.translation() - b.translation()).amax() < 1e-9);
        }

        #[test]
        fn rotation_error_is_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            prop_assert!((a.rotation_error_deg(&b) - b.rotation_error_deg(&a)).abs() < 1e-9);
        }
    }
}
