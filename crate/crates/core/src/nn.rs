//! Layer plumbing shared by the SGC unit and the models: the forward
//! context, parameter visiting, and batch-norm state.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SpnError};
use crate::rng::{substream, Stream};
use crate::tensor::{BatchStats, FeatureTensor, Tape, Var};

/// Forward-pass mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm, dropout active.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// Role of a stored tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    /// Batch-norm running mean/variance. Stored but not learnable.
    RunningStat,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        self != ParamKind::RunningStat
    }
}

/// Anything holding named tensors.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&str, &FeatureTensor, ParamKind));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut FeatureTensor, ParamKind));

    /// Learnable scalar count.
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t, k| {
            if k.learnable() {
                n += t.len();
            }
        });
        n
    }
}

/// One forward pass: the tape plus bookkeeping for parameters, batch-norm
/// statistics and dropout randomness.
pub struct Ctx {
    pub tape: Tape,
    mode: Mode,
    track_params: bool,
    bindings: Vec<(String, Var)>,
    bn_stats: Vec<(String, BatchStats)>,
    dropout_rng: ChaCha8Rng,
}

impl Ctx {
    /// `dropout_seed` only matters in [`Mode::Train`].
    pub fn new(mode: Mode, dropout_seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            mode,
            track_params: mode == Mode::Train,
            bindings: Vec::new(),
            bn_stats: Vec::new(),
            dropout_rng: substream(dropout_seed, Stream::Dropout, 0),
        }
    }

    /// Forces parameter gradients on or off regardless of mode.
    pub fn with_param_grads(mut self, on: bool) -> Self {
        self.track_params = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Puts a parameter on the tape under `name`.
    pub fn param(&mut self, name: &str, t: &FeatureTensor) -> Var {
        if self.track_params {
            let v = self.tape.param(t.clone());
            self.bindings.push((name.to_string(), v));
            v
        } else {
            self.tape.constant(t.clone())
        }
    }

    pub(crate) fn record_bn(&mut self, name: &str, stats: BatchStats) {
        self.bn_stats.push((name.to_string(), stats));
    }

    pub fn bn_stats(&self) -> &[(String, BatchStats)] {
        &self.bn_stats
    }

    /// Inverted dropout with keep probability `1 − rate`; identity in eval mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let n = self.tape.value(x).len();
        let mask = (0..n)
            .map(|_| {
                if self.dropout_rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.tape.dropout_mask(x, mask)
    }

    /// Gradients of every bound parameter after [`Tape::backward`].
    pub fn param_grads(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (name, v) in &self.bindings {
            let g = self.tape.grad(*v).ok_or_else(|| {
                SpnError::Usage(format!("no gradient for {name}; run backward first"))
            })?;
            match out.get_mut(name) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    out.insert(name.clone(), g.to_vec());
                }
            }
        }
        Ok(out)
    }
}

/// Batch normalization over every non-channel axis.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: FeatureTensor,
    pub beta: FeatureTensor,
    pub running_mean: FeatureTensor,
    pub running_var: FeatureTensor,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            gamma: FeatureTensor::filled(&[channels], 1.0),
            beta: FeatureTensor::zeros(&[channels]),
            running_mean: FeatureTensor::zeros(&[channels]),
            running_var: FeatureTensor::filled(&[channels], 1.0),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let g = ctx.param(&format!("{}.gamma", self.name), &self.gamma);
        let b = ctx.param(&format!("{}.beta", self.name), &self.beta);
        match ctx.mode() {
            Mode::Train => {
                let (y, stats) = ctx.tape.batch_norm_train(x, g, b)?;
                ctx.record_bn(&self.name, stats);
                Ok(y)
            }
            Mode::Eval => ctx.tape.batch_norm_eval(
                x,
                g,
                b,
                self.running_mean.values(),
                self.running_var.values(),
            ),
        }
    }

    /// `running = momentum · running + (1 − momentum) · batch`.
    pub fn update_running(&mut self, stats: &BatchStats, momentum: f64) -> Result<()> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(SpnError::Config(format!(
                "batch-norm momentum must lie in (0, 1), got {momentum}"
            )));
        }
        for (r, &b) in self.running_mean.values_mut().iter_mut().zip(&stats.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, &b) in self.running_var.values_mut().iter_mut().zip(&stats.var) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        Ok(())
    }
}

impl Module for BatchNorm {
    fn visit(&self, f: &mut dyn FnMut(&str, &FeatureTensor, ParamKind)) {
        f(
            &format!("{}.gamma", self.name),
            &self.gamma,
            ParamKind::BnScale,
        );
        f(
            &format!("{}.beta", self.name),
            &self.beta,
            ParamKind::BnShift,
        );
        f(
            &format!("{}.running_mean", self.name),
            &self.running_mean,
            ParamKind::RunningStat,
        );
        f(
            &format!("{}.running_var", self.name),
            &self.running_var,
            ParamKind::RunningStat,
        );
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut FeatureTensor, ParamKind)) {
        f(
            &format!("{}.gamma", self.name),
            &mut self.gamma,
            ParamKind::BnScale,
        );
        f(
            &format!("{}.beta", self.name),
            &mut self.beta,
            ParamKind::BnShift,
        );
        f(
            &format!("{}.running_mean", self.name),
            &mut self.running_mean,
            ParamKind::RunningStat,
        );
        f(
            &format!("{}.running_var", self.name),
            &mut self.running_var,
            ParamKind::RunningStat,
        );
    }
}
