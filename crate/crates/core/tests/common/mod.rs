//! Reference implementations used as test oracles. Written independently
//! of the library code paths they check.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use spn_core::pointcloud::Point3;
use spn_core::rng::{substream, Stream};

pub fn rng(seed: u64) -> ChaCha8Rng {
    substream(seed, Stream::Synth, 1_000_000)
}

pub fn d2(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

pub fn uniform_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect()
}

/// Every other point ranked by (squared distance, index).
pub fn ranked(points: &[Point3], q: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != q)
        .map(|j| (d2(&points[q], &points[j]), j))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().map(|(_, j)| j).collect()
}

pub fn knn_oracle(points: &[Point3], q: usize, k: usize) -> Vec<usize> {
    ranked(points, q)[..k].to_vec()
}

pub fn radius_oracle(points: &[Point3], q: usize, r: f64, k: usize) -> Vec<usize> {
    let order = ranked(points, q);
    let mut inside: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&j| d2(&points[q], &points[j]).sqrt() <= r)
        .collect();
    inside.truncate(k);
    let pad = inside.first().copied().unwrap_or(order[0]);
    while inside.len() < k {
        inside.push(pad);
    }
    inside
}

/// Checks the greedy max-min recurrence step by step, exhaustively.
pub fn fps_violation(points: &[Point3], picks: &[usize]) -> Option<String> {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a] / n;
        }
    }
    let far = points.iter().map(|p| d2(p, &c)).fold(f64::MIN, f64::max);
    let first = points.iter().position(|p| d2(p, &c) == far).unwrap();
    if picks.first() != Some(&first) {
        return Some(format!("first pick {:?}, expected {first}", picks.first()));
    }
    for step in 1..picks.len() {
        let chosen = &picks[..step];
        let score = |j: usize| {
            chosen
                .iter()
                .map(|&s| d2(&points[j], &points[s]))
                .fold(f64::MAX, f64::min)
        };
        let best = (0..points.len())
            .filter(|j| !chosen.contains(j))
            .map(score)
            .fold(f64::MIN, f64::max);
        let expected = (0..points.len())
            .find(|&j| !chosen.contains(&j) && score(j) == best)
            .unwrap();
        if picks[step] != expected {
            return Some(format!(
                "step {step}: picked {}, expected {expected}",
                picks[step]
            ));
        }
    }
    None
}

/// Expands `g × ci × co` group weights into a dense `(g·ci) × (g·co)`
/// block-diagonal matrix.
pub fn block_diag(w: &[f64], g: usize, ci: usize, co: usize) -> Vec<f64> {
    let (cin, cout) = (g * ci, g * co);
    let mut full = vec![0.0; cin * cout];
    for j in 0..g {
        for i in 0..ci {
            for o in 0..co {
                full[(j * ci + i) * cout + j * co + o] = w[(j * ci + i) * co + o];
            }
        }
    }
    full
}

/// Plain `x · w + b` over rows.
pub fn dense(x: &[f64], rows: usize, cin: usize, cout: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cout];
    for r in 0..rows {
        for o in 0..cout {
            let mut acc = 0.0;
            for i in 0..cin {
                acc += x[r * cin + i] * w[i * cout + o];
            }
            out[r * cout + o] = acc + b[o];
        }
    }
    out
}

/// Shape IoU from an explicit confusion matrix over `parts`.
#[allow(clippy::needless_range_loop)]
pub fn miou_oracle(pred: &[usize], truth: &[usize], parts: &[usize]) -> f64 {
    let m = parts.len();
    let pos = |l: usize| parts.iter().position(|&p| p == l).unwrap();
    let mut conf = vec![vec![0usize; m]; m];
    for (&p, &t) in pred.iter().zip(truth) {
        conf[pos(t)][pos(p)] += 1;
    }
    let mut total = 0.0;
    for a in 0..m {
        let tp = conf[a][a];
        let row: usize = conf[a].iter().sum();
        let col: usize = (0..m).map(|b| conf[b][a]).sum();
        let union = row + col - tp;
        total += if union == 0 {
            1.0
        } else {
            tp as f64 / union as f64
        };
    }
    total / m as f64
}

/// Scalar Adam on `f(x) = x²/2` (gradient `x`), returning the trajectory.
pub fn adam_scalar(x0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    let mut out = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        x -= lr * mh / (vh.sqrt() + eps);
        out.push(x);
    }
    out
}
