use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Sample};
use crate::error::{Result, SpnError};
use crate::pointcloud::{normalize_unit_sphere, Labels, Point3, PointCloud};
use crate::rng::{substream, Stream};

pub const SYNTH_CLASSES: [&str; 4] = ["sphere", "cube", "plane", "torus"];

/// Part labels per class: sphere upper/lower, cube caps/sides, plane
/// left/right, torus inner/outer.
pub const SYNTH_PART_SETS: [[usize; 2]; 4] = [[0, 1], [2, 3], [4, 5], [6, 7]];

const TORUS_R: f64 = 1.0;
const TORUS_TUBE: f64 = 0.35;

fn unit_dir(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v: Point3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Sphere surface as antipodal pairs, so the centroid is the origin up to
/// rounding.
fn sphere(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Point3, usize)> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = unit_dir(rng);
        let part = |p: &Point3| usize::from(p[2] < 0.0);
        out.push((p, part(&p)));
        if out.len() < n {
            let q = [-p[0], -p[1], -p[2]];
            out.push((q, part(&q)));
        }
    }
    out
}

fn cube(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Point3, usize)> {
    (0..n)
        .map(|_| {
            let face = rng.random_range(0..6usize);
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let mut p = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.0,
            ];
            p.swap(2, axis);
            p[axis] = sign;
            (p, if axis == 2 { 2 } else { 3 })
        })
        .collect()
}

fn plane(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Point3, usize)> {
    (0..n)
        .map(|_| {
            let p = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.0,
            ];
            (p, if p[0] >= 0.0 { 4 } else { 5 })
        })
        .collect()
}

/// Area-uniform torus samples by rejection on the tube angle.
fn torus(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Point3, usize)> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u = rng.random_range(0.0..std::f64::consts::TAU);
        let v = rng.random_range(0.0..std::f64::consts::TAU);
        let w = rng.random_range(0.0..TORUS_R + TORUS_TUBE);
        let rho = TORUS_R + TORUS_TUBE * v.cos();
        if w > rho {
            continue;
        }
        let p = [rho * u.cos(), rho * u.sin(), TORUS_TUBE * v.sin()];
        out.push((p, if rho < TORUS_R { 6 } else { 7 }));
    }
    out
}

/// `n_per_class` clouds of each synthetic class, class-major, normalized
/// to the unit sphere, with per-point part labels.
pub fn synth_dataset(n_per_class: usize, n_points: usize, seed: u64) -> Result<Dataset> {
    if n_points < 32 {
        return Err(SpnError::Config(format!(
            "synthetic clouds need ≥ 32 points, got {n_points}"
        )));
    }
    let mut samples = Vec::with_capacity(4 * n_per_class);
    for class in 0..SYNTH_CLASSES.len() {
        for i in 0..n_per_class {
            let mut rng = substream(seed, Stream::Synth, (class * n_per_class + i) as u64);
            let pts = match class {
                0 => sphere(&mut rng, n_points),
                1 => cube(&mut rng, n_points),
                2 => plane(&mut rng, n_points),
                _ => torus(&mut rng, n_points),
            };
            let positions: Vec<Point3> = pts.iter().map(|(p, _)| *p).collect();
            let parts: Vec<usize> = pts.iter().map(|(_, l)| *l).collect();
            let cloud = normalize_unit_sphere(&PointCloud::from_positions(&positions)?)
                .with_labels(Labels::PerPoint(parts.iter().map(|&l| l as i64).collect()))?;
            samples.push(Sample {
                cloud,
                class,
                parts: Some(parts),
            });
        }
    }
    Ok(Dataset {
        samples,
        n_classes: SYNTH_CLASSES.len(),
        part_sets: SYNTH_PART_SETS.iter().map(|s| s.to_vec()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_seeded_and_normalized() {
        let a = synth_dataset(3, 64, 7).unwrap();
        let b = synth_dataset(3, 64, 7).unwrap();
        assert_eq!(a, b);
        for c in 0..4 {
            assert_eq!(a.samples.iter().filter(|s| s.class == c).count(), 3);
        }
        for s in a.samples.iter().filter(|s| s.class == 0) {
            for p in s.cloud.positions() {
                let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                assert!((n - 1.0).abs() < 1e-9, "{n}");
            }
        }
        for s in &a.samples {
            let set = &a.part_sets[s.class];
            assert!(s.parts.as_ref().unwrap().iter().all(|p| set.contains(p)));
        }
        assert_ne!(a, synth_dataset(3, 64, 8).unwrap());
    }
}
