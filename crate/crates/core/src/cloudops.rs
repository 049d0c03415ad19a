//! Post-fusion cloud reduction (voxel sampling) and 3-D Gaussian smoothing.

use std::collections::HashMap;
use std::fmt;

use nalgebra::Matrix3;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geometry::Point3;
use crate::spatial::KdTree;

#[derive(Debug, Error, PartialEq)]
pub enum CloudOpsError {
    #[error("voxel size must be positive, got {0}")]
    InvalidVoxelSize(f64),
    #[error("need at least {needed} points, got {got}")]
    InsufficientNeighborhood { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type VoxelKey = [i64; 3];

/// Occupied voxels of a cloud with the representative chosen for each.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    pub origin: Point3,
    /// Cell key → index of the selected input point.
    pub occupied: HashMap<VoxelKey, usize>,
}

impl VoxelGrid {
    /// Lattice origin for `cloud`: its component-wise minimum snapped down to
    /// a multiple of `voxel_size`. Snapping keeps the grid fixed when the
    /// sampled cloud is sampled again.
    pub fn origin_for(cloud: &PointCloud, voxel_size: f64) -> Point3 {
        let mut lo = Point3::repeat(f64::INFINITY);
        for p in &cloud.points {
            lo = lo.inf(p);
        }
        lo.map(|v| {
            if v.is_finite() {
                (v / voxel_size).floor() * voxel_size
            } else {
                0.0
            }
        })
    }

    pub fn key(&self, p: &Point3) -> VoxelKey {
        let rel = (p - self.origin) / self.voxel_size;
        [rel.x.floor() as i64, rel.y.floor() as i64, rel.z.floor() as i64]
    }

    pub fn center(&self, key: &VoxelKey) -> Point3 {
        self.origin + Point3::new(key[0] as f64 + 0.5, key[1] as f64 + 0.5, key[2] as f64 + 0.5) * self.voxel_size
    }

    /// Selects, per occupied voxel, the point closest to the voxel center
    /// (ties: lowest index).
    pub fn build(cloud: &PointCloud, voxel_size: f64) -> Result<Self, CloudOpsError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(CloudOpsError::InvalidVoxelSize(voxel_size));
        }
        let mut grid = Self {
            voxel_size,
            origin: Self::origin_for(cloud, voxel_size),
            occupied: HashMap::new(),
        };
        let mut best: HashMap<VoxelKey, (f64, usize)> = HashMap::new();
        for (i, p) in cloud.points.iter().enumerate() {
            let key = grid.key(p);
            let d = (p - grid.center(&key)).norm_squared();
            best.entry(key)
                .and_modify(|b| {
                    if d < b.0 {
                        *b = (d, i);
                    }
                })
                .or_insert((d, i));
        }
        grid.occupied = best.into_iter().map(|(k, (_, i))| (k, i)).collect();
        Ok(grid)
    }

    /// Selected indices in ascending input order.
    pub fn selected(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.occupied.values().copied().collect();
        idx.sort_unstable();
        idx
    }
}

/// One representative point per occupied voxel, in input order.
pub fn uniform_sample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud, CloudOpsError> {
    let grid = VoxelGrid::build(cloud, voxel_size)?;
    Ok(cloud.select(&grid.selected()))
}

/// Percentage of points removed by sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionRatio(pub f64);

impl fmt::Display for ReductionRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

/// `100 · (before − after) / before`.
pub fn reduction_ratio(before: usize, after: usize) -> Result<ReductionRatio, CloudOpsError> {
    if before == 0 {
        return Err(CloudOpsError::InvalidInput(
            "point count before sampling is zero".into(),
        ));
    }
    if after > before {
        return Err(CloudOpsError::InvalidInput(format!(
            "count after sampling ({after}) exceeds count before ({before})"
        )));
    }
    Ok(ReductionRatio(100.0 * (before - after) as f64 / before as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFilterParams {
    pub k_neighbors: usize,
    /// Added to the neighbourhood covariance diagonal (m²).
    pub reg: f64,
}

impl Default for GaussianFilterParams {
    fn default() -> Self {
        Self {
            k_neighbors: 6,
            reg: 1e-6,
        }
    }
}

/// Replaces every point by the Gaussian-weighted mean of itself and its
/// `k` nearest neighbours. The Gaussian is centred on the point with the
/// neighbourhood's sample covariance (plus `reg·I`).
pub fn gaussian_filter(cloud: &PointCloud, params: &GaussianFilterParams) -> Result<PointCloud, CloudOpsError> {
    let k = params.k_neighbors;
    if k < 3 {
        return Err(CloudOpsError::InvalidInput(format!(
            "k_neighbors must be >= 3, got {k}"
        )));
    }
    if !(params.reg > 0.0) {
        return Err(CloudOpsError::InvalidInput(format!(
            "reg must be positive, got {}",
            params.reg
        )));
    }
    if cloud.len() < k + 1 {
        return Err(CloudOpsError::InsufficientNeighborhood {
            needed: k + 1,
            got: cloud.len(),
        });
    }
    let tree = KdTree::build(&cloud.points);
    let points = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, x0)| {
            let nbrs: Vec<Point3> = tree
                .knn(x0, k + 1)
                .into_iter()
                .filter(|n| n.index != i)
                .take(k)
                .map(|n| cloud.points[n.index])
                .collect();
            smooth_point(x0, &nbrs, params.reg)
        })
        .collect();
    Ok(PointCloud {
        points,
        colors: cloud.colors.clone(),
    })
}

/// Gaussian-weighted average of `x0` and `neighbors`.
pub fn smooth_point(x0: &Point3, neighbors: &[Point3], reg: f64) -> Point3 {
    let n = neighbors.len() + 1;
    let mean = (x0 + neighbors.iter().sum::<Point3>()) / n as f64;
    let mut cov = (x0 - mean) * (x0 - mean).transpose();
    for p in neighbors {
        cov += (p - mean) * (p - mean).transpose();
    }
    cov = cov / (n - 1) as f64 + Matrix3::identity() * reg;
    let Some(chol) = cov.cholesky() else {
        return *x0;
    };
    // x0 itself has weight exp(0) = 1
    let mut wsum = 1.0;
    let mut acc = Point3::zeros();
    for p in neighbors {
        let d = p - x0;
        let w = (-0.5 * d.dot(&chol.solve(&d))).exp();
        wsum += w;
        acc += w * d;
    }
    x0 + acc / wsum
}
