use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use super::{dist2, Point3, PointCloud};
use crate::error::{Result, SpnError};
use crate::parallel;

/// How neighborhoods are formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMethod {
    Knn,
    Radius,
}

/// `rows × k` neighbor table. Row `r` holds the neighbors of point
/// `centers[r]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    pub indices: Vec<usize>,
    pub centers: Vec<usize>,
    pub k: usize,
    pub method: NeighborMethod,
}

impl NeighborIndex {
    pub fn rows(&self) -> usize {
        self.centers.len()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.indices[r * self.k..(r + 1) * self.k]
    }
}

/// Search strategy for exact k-NN.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnnBackend {
    BruteForce,
    KdTree,
    /// Brute force for small clouds, k-d tree otherwise.
    Auto,
}

const AUTO_TREE_MIN_POINTS: usize = 512;

/// Exact k nearest neighbors of `points[q]` among `points`, excluding `q`,
/// ordered by (squared distance, index).
pub fn brute_force_knn_row(points: &[Point3], q: usize, k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != q)
        .map(|(j, p)| (dist2(&points[q], p), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(SpnError::Input(format!(
            "k must satisfy 1 ≤ k ≤ N−1, got k={k} for N={n}"
        )));
    }
    Ok(())
}

/// k-NN rows for the given `centers` (indices into `points`), self excluded.
pub fn knn_query(
    points: &[Point3],
    centers: &[usize],
    k: usize,
    backend: KnnBackend,
) -> Result<NeighborIndex> {
    check_k(points.len(), k)?;
    if let Some(&bad) = centers.iter().find(|&&c| c >= points.len()) {
        return Err(SpnError::Input(format!(
            "center {bad} out of range for {} points",
            points.len()
        )));
    }
    let use_tree = match backend {
        KnnBackend::BruteForce => false,
        KnnBackend::KdTree => true,
        KnnBackend::Auto => points.len() >= AUTO_TREE_MIN_POINTS,
    };
    let rows: Vec<Vec<usize>> = if use_tree {
        let tree = KdTree::build(points);
        parallel::map_indices(centers.len(), |r| {
            tree.knn(&points[centers[r]], k, Some(centers[r]))
        })
    } else {
        parallel::map_indices(centers.len(), |r| {
            brute_force_knn_row(points, centers[r], k)
        })
    };
    Ok(NeighborIndex {
        indices: rows.into_iter().flatten().collect(),
        centers: centers.to_vec(),
        k,
        method: NeighborMethod::Knn,
    })
}

/// k nearest neighbors of every point of `cloud` by XYZ distance.
pub fn knn_search(cloud: &PointCloud, k: usize) -> Result<NeighborIndex> {
    knn_search_with(cloud, k, KnnBackend::Auto)
}

pub fn knn_search_with(cloud: &PointCloud, k: usize, backend: KnnBackend) -> Result<NeighborIndex> {
    let pts = cloud.positions();
    let centers: Vec<usize> = (0..pts.len()).collect();
    knn_query(&pts, &centers, k, backend)
}

/// Up to `k` in-radius neighbors per center, nearest first, padded by
/// repeating the nearest one found. A center with nothing in range is padded
/// with its nearest neighbor overall.
pub fn radius_query(
    points: &[Point3],
    centers: &[usize],
    r: f64,
    k: usize,
) -> Result<NeighborIndex> {
    if !(r > 0.0) || k == 0 {
        return Err(SpnError::Input(format!(
            "radius search needs r > 0 and k ≥ 1, got r={r}, k={k}"
        )));
    }
    if points.len() < 2 {
        return Err(SpnError::Input(
            "radius search needs at least two points".into(),
        ));
    }
    let r2 = r * r;
    let rows = parallel::map_indices(centers.len(), |row| {
        let q = centers[row];
        let ordered = brute_force_knn_row(points, q, points.len() - 1);
        let mut picked: Vec<usize> = ordered
            .iter()
            .copied()
            .take_while(|&j| dist2(&points[q], &points[j]) <= r2)
            .take(k)
            .collect();
        let pad = picked.first().copied().unwrap_or(ordered[0]);
        picked.resize(k, pad);
        picked
    });
    Ok(NeighborIndex {
        indices: rows.into_iter().flatten().collect(),
        centers: centers.to_vec(),
        k,
        method: NeighborMethod::Radius,
    })
}

pub fn radius_search(cloud: &PointCloud, r: f64, k: usize) -> Result<NeighborIndex> {
    let pts = cloud.positions();
    let centers: Vec<usize> = (0..pts.len()).collect();
    radius_query(&pts, &centers, r, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> PointCloud {
        PointCloud::from_positions(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap()
    }

    #[test]
    fn knn_forced_by_distances() {
        let nb = knn_search(&line(), 1).unwrap();
        assert_eq!(nb.indices, vec![1, 0, 1]);
    }

    #[test]
    fn knn_full_rows_are_permutations() {
        let nb = knn_search(&line(), 2).unwrap();
        for r in 0..3 {
            let mut row = nb.row(r).to_vec();
            row.sort();
            let expect: Vec<usize> = (0..3).filter(|&j| j != r).collect();
            assert_eq!(row, expect);
        }
    }

    #[test]
    fn knn_rejects_large_k() {
        assert!(matches!(knn_search(&line(), 3), Err(SpnError::Input(_))));
        assert!(matches!(knn_search(&line(), 0), Err(SpnError::Input(_))));
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let c = PointCloud::from_positions(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ])
        .unwrap();
        for backend in [KnnBackend::BruteForce, KnnBackend::KdTree] {
            let nb = knn_search_with(&c, 2, backend).unwrap();
            assert_eq!(nb.row(0), &[1, 2]);
        }
    }

    #[test]
    fn radius_padding() {
        // r below the minimum pairwise distance: every row repeats its nearest.
        let nb = radius_search(&line(), 0.5, 3).unwrap();
        assert_eq!(nb.indices, vec![1, 1, 1, 0, 0, 0, 1, 1, 1]);
        // r covers the cloud: identical to k-NN.
        let nb = radius_search(&line(), 10.0, 2).unwrap();
        assert_eq!(nb.indices, knn_search(&line(), 2).unwrap().indices);
        // partially filled row is padded with its nearest in-range point.
        let nb = radius_search(&line(), 2.5, 2).unwrap();
        assert_eq!(nb.row(2), &[1, 1]);
    }
}
