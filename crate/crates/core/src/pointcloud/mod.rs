//! Point-cloud geometry: neighbor search, sampling, edge features,
//! normalization, augmentation, interpolation and file formats.

mod edge;
pub mod io;
mod kdtree;
mod neighbors;
mod sampling;
mod transform;

pub use edge::{build_edge_features, EdgeFeatureVariant};
pub use kdtree::KdTree;
pub use neighbors::{
    brute_force_knn_row, knn_query, knn_search, knn_search_with, radius_query, radius_search,
    KnnBackend, NeighborIndex, NeighborMethod,
};
pub use sampling::farthest_point_sample;
pub use transform::{
    augment, interpolate_features, interpolation_weights, normalize_unit_sphere, AugmentParams,
    InterpolationWeights,
};

use crate::error::{Result, SpnError};

/// A 3D position.
pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Labels attached to a cloud.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Labels {
    #[default]
    None,
    PerCloud(i64),
    PerPoint(Vec<i64>),
}

/// `N × F` point table; channels 0..3 are XYZ.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    n_points: usize,
    n_channels: usize,
    data: Vec<f64>,
    labels: Labels,
}

impl PointCloud {
    pub fn new(n_points: usize, n_channels: usize, data: Vec<f64>) -> Result<Self> {
        if n_points == 0 {
            return Err(SpnError::Input(
                "point cloud needs at least one point".into(),
            ));
        }
        if n_channels < 3 {
            return Err(SpnError::Input(format!(
                "point cloud needs at least 3 channels, got {n_channels}"
            )));
        }
        if data.len() != n_points * n_channels {
            return Err(SpnError::Dimension(format!(
                "{} values for {n_points} × {n_channels} cloud",
                data.len()
            )));
        }
        if data
            .chunks(n_channels)
            .any(|r| r[..3].iter().any(|v| !v.is_finite()))
        {
            return Err(SpnError::Input("non-finite point position".into()));
        }
        Ok(Self {
            n_points,
            n_channels,
            data,
            labels: Labels::None,
        })
    }

    pub fn from_positions(points: &[Point3]) -> Result<Self> {
        let data = points.iter().flat_map(|p| p.iter().copied()).collect();
        Self::new(points.len(), 3, data)
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        if let Labels::PerPoint(l) = &labels {
            if l.len() != self.n_points {
                return Err(SpnError::Dimension(format!(
                    "{} per-point labels for {} points",
                    l.len(),
                    self.n_points
                )));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn channels(&self) -> usize {
        self.n_channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_channels..(i + 1) * self.n_channels]
    }

    pub fn position(&self, i: usize) -> Point3 {
        let r = self.row(i);
        [r[0], r[1], r[2]]
    }

    pub fn positions(&self) -> Vec<Point3> {
        (0..self.n_points).map(|i| self.position(i)).collect()
    }

    pub(crate) fn set_position(&mut self, i: usize, p: Point3) {
        let f = self.n_channels;
        self.data[i * f..i * f + 3].copy_from_slice(&p);
    }

    /// Reorders points so that new point `i` is old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_points {
            return Err(SpnError::Dimension("permutation length mismatch".into()));
        }
        let data = perm
            .iter()
            .flat_map(|&p| self.row(p).iter().copied())
            .collect();
        let labels = match &self.labels {
            Labels::PerPoint(l) => Labels::PerPoint(perm.iter().map(|&p| l[p]).collect()),
            other => other.clone(),
        };
        Self::new(self.n_points, self.n_channels, data)?.with_labels(labels)
    }
}
