//! Central-difference gradient verification.

use super::{FeatureTensor, Tape, Var};
use crate::error::{Result, SpnError};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of
    /// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

const REL_FLOOR: f64 = 1e-8;

/// Compares the tape gradient of `f` at `x` with central differences over
/// every coordinate of `x`.
///
/// `f` receives a tape and the leaf holding `x` and must return a scalar.
pub fn finite_difference_check<F>(f: F, x: &FeatureTensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.param(x.clone().with_requires_grad(true));
    let out = f(&mut tape, leaf)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(leaf)
        .ok_or_else(|| SpnError::Verification("no gradient reached the input".into()))?
        .to_vec();
    let eval = |t: &FeatureTensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.constant(t.clone());
        let out = f(&mut tape, leaf)?;
        scalar_of(&tape, out)
    };
    finite_difference_probe(eval, x, &analytic, eps, None)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(SpnError::Usage(format!(
            "finite-difference target must be scalar, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.values()[0])
}

/// Generic central-difference comparison against a precomputed gradient.
///
/// `eval` maps a perturbed copy of `x` to the scalar objective. When `coords`
/// is given only those coordinates are probed.
pub fn finite_difference_probe<E>(
    eval: E,
    x: &FeatureTensor,
    analytic: &[f64],
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    E: Fn(&FeatureTensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(SpnError::Input(format!("eps must be positive, got {eps}")));
    }
    if analytic.len() != x.len() {
        return Err(SpnError::Dimension(format!(
            "analytic gradient of length {} for tensor {:?}",
            analytic.len(),
            x.shape()
        )));
    }
    let base = eval(x)?;
    let again = eval(x)?;
    if base.to_bits() != again.to_bits() {
        return Err(SpnError::Verification(format!(
            "objective is not deterministic: {base} vs {again}"
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.values_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = FeatureTensor::from_fn(&[5], |i| i as f64 * 0.3 - 0.7);
        let w = FeatureTensor::from_fn(&[5], |i| 1.0 + i as f64);
        let r = finite_difference_check(
            |tape, x| {
                let wv = tape.constant(w.clone());
                let p = tape.mul(x, wv)?;
                Ok(tape.sum(p))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn relu_away_from_kink() {
        let x = FeatureTensor::new(&[4], vec![-1.0, 2.0, 0.5, -0.3]).unwrap();
        let r = finite_difference_check(
            |tape, x| {
                let y = tape.relu(x);
                let sq = tape.mul(y, y)?;
                Ok(tape.sum(sq))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn nondeterministic_objective_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0u32);
        let x = FeatureTensor::scalar(1.0);
        let err = finite_difference_probe(
            |t| {
                calls.set(calls.get() + 1);
                Ok(t.values()[0] + calls.get() as f64)
            },
            &x,
            &[1.0],
            1e-6,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, SpnError::Verification(_)));
    }
}
