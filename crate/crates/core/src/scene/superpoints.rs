use std::collections::BTreeMap;

use nalgebra::Vector3;
use ndarray::Array2;

use crate::geom::PointCloud;

/// Downsampled superpoints, the raw points each one owns, and (once
/// computed) one descriptor row per superpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpointSet {
    pub superpoints: Vec<Vector3<f64>>,
    pub patch_members: Vec<Vec<usize>>,
    /// `len × d`; zero columns until descriptors are computed.
    pub features: Array2<f64>,
}

impl SuperpointSet {
    pub fn len(&self) -> usize {
        self.superpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.superpoints.is_empty()
    }

    pub fn has_features(&self) -> bool {
        self.features.ncols() > 0
    }

    /// Index of the patch owning each raw point.
    pub fn point_to_patch(&self, num_points: usize) -> Vec<usize> {
        let mut owner = vec![usize::MAX; num_points];
        for (patch, members) in self.patch_members.iter().enumerate() {
            for &m in members {
                owner[m] = patch;
            }
        }
        owner
    }
}

/// One superpoint per occupied voxel, placed at the centroid of its members.
/// Superpoints are ordered by voxel key (x, then y, then z).
///
/// # Panics
/// If `voxel_size` is not strictly positive.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> SuperpointSet {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    let mut voxels: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = [
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        ];
        voxels.entry(key).or_default().push(i);
    }
    let mut superpoints = Vec::with_capacity(voxels.len());
    let mut patch_members = Vec::with_capacity(voxels.len());
    for members in voxels.into_values() {
        let sum: Vector3<f64> = members.iter().map(|&i| cloud.points()[i]).sum();
        superpoints.push(sum / members.len() as f64);
        patch_members.push(members);
    }
    let n = superpoints.len();
    SuperpointSet {
        superpoints,
        patch_members,
        features: Array2::zeros((n, 0)),
    }
}
