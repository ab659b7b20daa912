use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::kdtree::KdTree;
use super::{brute_force_knn_row, dist2, Point3, PointCloud};
use crate::error::{Result, SpnError};
use crate::rng::{substream, Stream};
use crate::tensor::FeatureTensor;

/// Centers positions on their centroid and scales the farthest point to
/// norm 1. Extra channels are untouched.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> PointCloud {
    let n = cloud.len();
    let mut c = [0.0; 3];
    for i in 0..n {
        let p = cloud.position(i);
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    for v in &mut c {
        *v /= n as f64;
    }
    let centered: Vec<Point3> = (0..n)
        .map(|i| {
            let p = cloud.position(i);
            [p[0] - c[0], p[1] - c[1], p[2] - c[2]]
        })
        .collect();
    let max_norm = centered
        .iter()
        .map(|p| dist2(p, &[0.0; 3]).sqrt())
        .fold(0.0, f64::max);
    let mut out = cloud.clone();
    for (i, p) in centered.into_iter().enumerate() {
        let q = if max_norm > 0.0 {
            [p[0] / max_norm, p[1] / max_norm, p[2] / max_norm]
        } else {
            p
        };
        out.set_position(i, q);
    }
    out
}

/// Training-time augmentation settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentParams {
    /// Random rotation about the z (up) axis.
    pub rotate: bool,
    pub scale_range: [f64; 2],
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotate: true,
            scale_range: [0.8, 1.25],
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
        }
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            rotate: false,
            scale_range: [1.0, 1.0],
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
        }
    }
}

/// Rotation about z, isotropic scale, then clipped Gaussian jitter.
/// Deterministic in `seed`.
pub fn augment(cloud: &PointCloud, seed: u64, params: &AugmentParams) -> Result<PointCloud> {
    let [lo, hi] = params.scale_range;
    if !(lo > 0.0 && lo <= hi) || !(params.jitter_sigma >= 0.0) {
        return Err(SpnError::Config(format!(
            "augment needs 0 < lo ≤ hi and sigma ≥ 0, got {params:?}"
        )));
    }
    let mut rng = substream(seed, Stream::Augment, 0);
    let (sin, cos) = if params.rotate {
        rng.random_range(0.0..std::f64::consts::TAU).sin_cos()
    } else {
        (0.0, 1.0)
    };
    let scale = if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    };
    let jitter = (params.jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, params.jitter_sigma).expect("sigma is finite"));
    let mut out = cloud.clone();
    for i in 0..cloud.len() {
        let mut p = cloud.position(i);
        if params.rotate {
            p = [cos * p[0] - sin * p[1], sin * p[0] + cos * p[1], p[2]];
        }
        if scale != 1.0 {
            p = [p[0] * scale, p[1] * scale, p[2] * scale];
        }
        if let Some(d) = &jitter {
            for v in &mut p {
                let clip = params.jitter_clip;
                *v += d.sample(&mut rng).clamp(-clip, clip);
            }
        }
        out.set_position(i, p);
    }
    Ok(out)
}

/// Per-fine-point neighbor indices and normalized weights for feature
/// interpolation, `width` entries per point.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationWeights {
    pub idx: Vec<usize>,
    pub weights: Vec<f64>,
    pub width: usize,
}

/// Inverse-squared-distance weights over the (up to) 3 nearest coarse points.
/// A fine point that coincides with a coarse point takes that point's weight
/// exactly 1.
pub fn interpolation_weights(coarse: &[Point3], fine: &[Point3]) -> Result<InterpolationWeights> {
    if coarse.is_empty() {
        return Err(SpnError::Input(
            "interpolation needs at least one coarse point".into(),
        ));
    }
    let width = coarse.len().min(3);
    let tree = (coarse.len() > 64).then(|| KdTree::build(coarse));
    let mut idx = Vec::with_capacity(fine.len() * width);
    let mut weights = Vec::with_capacity(fine.len() * width);
    // Brute-force rows need a query slot; append the fine point and exclude it.
    let mut scratch: Vec<Point3> = coarse.to_vec();
    scratch.push([0.0; 3]);
    for f in fine {
        let near = match &tree {
            Some(t) => t.knn(f, width, None),
            None => {
                *scratch.last_mut().unwrap() = *f;
                brute_force_knn_row(&scratch, coarse.len(), width)
            }
        };
        let d: Vec<f64> = near.iter().map(|&j| dist2(f, &coarse[j])).collect();
        if d[0] == 0.0 {
            weights.push(1.0);
            weights.extend(std::iter::repeat_n(0.0, width - 1));
        } else {
            let inv: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
            let total: f64 = inv.iter().sum();
            weights.extend(inv.iter().map(|v| v / total));
        }
        idx.extend(near);
    }
    Ok(InterpolationWeights {
        idx,
        weights,
        width,
    })
}

/// Interpolates `M × C` coarse features onto fine points.
pub fn interpolate_features(
    coarse_pts: &[Point3],
    coarse_feats: &FeatureTensor,
    fine_pts: &[Point3],
) -> Result<FeatureTensor> {
    if coarse_feats.shape().len() != 2 || coarse_feats.shape()[0] != coarse_pts.len() {
        return Err(SpnError::Dimension(format!(
            "coarse features {:?} for {} coarse points",
            coarse_feats.shape(),
            coarse_pts.len()
        )));
    }
    let w = interpolation_weights(coarse_pts, fine_pts)?;
    let c = coarse_feats.channels();
    let xs = coarse_feats.values();
    let mut out = vec![0.0; fine_pts.len() * c];
    for (r, orow) in out.chunks_mut(c.max(1)).enumerate() {
        for j in 0..w.width {
            let src = w.idx[r * w.width + j];
            let wt = w.weights[r * w.width + j];
            for (o, &v) in orow.iter_mut().zip(&xs[src * c..(src + 1) * c]) {
                *o += wt * v;
            }
        }
    }
    FeatureTensor::new(&[fine_pts.len(), c], out)
}
