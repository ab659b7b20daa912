use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpnError};
use crate::nn::Module;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update of a single array. `step` is the 1-based
/// step number after incrementing.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    moments: &mut Moments,
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    if moments.m.len() != param.len() {
        moments.m = vec![0.0; param.len()];
        moments.v = vec![0.0; param.len()];
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(&mut moments.m)
        .zip(&mut moments.v)
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Applies one Adam step to every learnable tensor of `module` that has an
/// entry in `grads`.
pub fn adam_step(
    module: &mut impl Module,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(SpnError::Config(format!(
            "learning rate must be ≥ 0, got {lr}"
        )));
    }
    for (name, g) in grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(SpnError::Training(format!(
                "non-finite gradient for {name}"
            )));
        }
    }
    let mut problem = None;
    module.visit_mut(&mut |name, t, _| {
        if let Some(g) = grads.get(name) {
            if g.len() != t.len() && problem.is_none() {
                problem = Some(format!(
                    "gradient for {name} has {} entries, tensor {}",
                    g.len(),
                    t.len()
                ));
            }
        }
    });
    if let Some(p) = problem {
        return Err(SpnError::Dimension(p));
    }
    state.step += 1;
    let (step, cfg) = (state.step, state.config);
    let moments = &mut state.moments;
    module.visit_mut(&mut |name, t, kind| {
        if !kind.learnable() {
            return;
        }
        if let Some(g) = grads.get(name) {
            let mo = moments.entry(name.to_string()).or_default();
            adam_update(t.values_mut(), g, mo, step, lr, &cfg);
        }
    });
    Ok(())
}
