use super::{dist2, Point3};
use crate::error::{Result, SpnError};

/// Greedy farthest point sampling.
///
/// Seeds with the lowest-index point among those farthest from the centroid,
/// then repeatedly takes the point maximizing the minimum squared distance to
/// the selected set. Ties go to the lowest index. Returns indices in
/// selection order.
pub fn farthest_point_sample(points: &[Point3], m: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(SpnError::Input(format!(
            "farthest point sampling needs 1 ≤ m ≤ N, got m={m}, N={n}"
        )));
    }
    let mut centroid = [0.0; 3];
    for p in points {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    for c in &mut centroid {
        *c /= n as f64;
    }
    let start = argmax_lowest(points.iter().map(|p| dist2(p, &centroid)), |_| true);

    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut next = start;
    loop {
        selected.push(next);
        taken[next] = true;
        if selected.len() == m {
            break;
        }
        let s = points[next];
        for (d, p) in min_d.iter_mut().zip(points) {
            let v = dist2(p, &s);
            if v < *d {
                *d = v;
            }
        }
        next = argmax_lowest(min_d.iter().copied(), |i| !taken[i]);
    }
    Ok(selected)
}

fn argmax_lowest(vals: impl Iterator<Item = f64>, allow: impl Fn(usize) -> bool) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in vals.enumerate() {
        if !allow(i) {
            continue;
        }
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.expect("at least one candidate").0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_endpoints() {
        let pts: Vec<Point3> = (0..8).map(|i| [i as f64, 0.0, 0.0]).collect();
        let s = farthest_point_sample(&pts, 2).unwrap();
        assert_eq!(s, vec![0, 7]);
    }

    #[test]
    fn m_equals_n_selects_everything() {
        let pts: Vec<Point3> = (0..5).map(|i| [(i * i) as f64, 1.0, 0.0]).collect();
        let mut s = farthest_point_sample(&pts, 5).unwrap();
        s.sort();
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn duplicates_are_still_selected() {
        let pts = vec![[0.0; 3]; 4];
        assert_eq!(farthest_point_sample(&pts, 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_m() {
        let pts = vec![[0.0; 3]; 4];
        assert!(farthest_point_sample(&pts, 0).is_err());
        assert!(farthest_point_sample(&pts, 5).is_err());
    }
}
