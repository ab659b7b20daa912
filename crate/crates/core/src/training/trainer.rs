use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::restricted_argmax;
use super::{adam_step, evaluate, AdamConfig, Dataset, MetricSet, OptimizerState, ScheduleConfig};
use crate::error::{Result, SpnError};
use crate::model::{Model, Task};
use crate::nn::{Ctx, Mode};
use crate::parallel;
use crate::pointcloud::{augment, AugmentParams};
use crate::rng::{substream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch: usize,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub augment: AugmentParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 32,
            seed: 42,
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
            augment: AugmentParams::default(),
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub lr: f64,
    pub bn_momentum: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub optimizer: OptimizerState,
    /// Metrics on the evaluation set after the last epoch.
    pub final_metrics: Option<MetricSet>,
}

fn derived_seed(seed: u64, stream: Stream, epoch: u32, index: usize) -> u64 {
    substream(seed, stream, (u64::from(epoch) << 32) | index as u64).random()
}

/// Mini-batch training: augment → forward → loss → backward → Adam, with
/// the learning-rate and batch-norm schedules stepped per epoch.
/// `on_epoch` sees each log line as soon as the epoch ends.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(SpnError::Input("training set is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(SpnError::Config("batch size must be ≥ 1".into()));
    }
    cfg.schedule.validate()?;
    let mut state = OptimizerState::new(cfg.adam);
    let mut logs = Vec::with_capacity(cfg.epochs as usize);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lr = cfg.schedule.lr(epoch);
        let bn_momentum = cfg.schedule.bn_momentum(epoch);
        order.sort_unstable();
        order.shuffle(&mut substream(cfg.seed, Stream::Shuffle, u64::from(epoch)));
        let (mut loss_sum, mut seen, mut correct, mut total) = (0.0, 0usize, 0usize, 0usize);
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let clouds = parallel::map_indices(idx.len(), |j| {
                let i = idx[j];
                let s = derived_seed(cfg.seed, Stream::Augment, epoch, i);
                augment(&train_set.samples[i].cloud, s, &cfg.augment)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = clouds.iter().collect();
            let labels: Vec<usize> = match model.task {
                Task::Classify => idx.iter().map(|&i| train_set.samples[i].class).collect(),
                Task::Segment => idx
                    .iter()
                    .map(|&i| {
                        train_set.samples[i].parts.clone().ok_or_else(|| {
                            SpnError::Input("segmentation sample without part labels".into())
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
                    .concat(),
            };
            let mut ctx = Ctx::new(
                Mode::Train,
                derived_seed(cfg.seed, Stream::Dropout, epoch, b),
            );
            let logits = model.forward(&mut ctx, &refs)?;
            let loss = ctx.tape.softmax_cross_entropy(logits, &labels)?;
            let loss_v = ctx.tape.value(loss).values()[0];
            if !loss_v.is_finite() {
                return Err(SpnError::Training(format!(
                    "loss became {loss_v} at epoch {epoch}, batch {b}"
                )));
            }
            let lt = ctx.tape.value(logits);
            let l = lt.channels();
            let all: Vec<usize> = (0..l).collect();
            let n_pts = labels.len() / idx.len();
            for (r, (row, &y)) in lt.values().chunks(l).zip(&labels).enumerate() {
                let allowed = match model.task {
                    Task::Classify => &all,
                    Task::Segment => {
                        let cat = train_set.samples[idx[r / n_pts]].class;
                        train_set.part_sets.get(cat).unwrap_or(&all)
                    }
                };
                correct += usize::from(restricted_argmax(row, allowed) == y);
            }
            total += labels.len();
            ctx.tape.backward(loss)?;
            let grads = ctx.param_grads()?;
            adam_step(model, &grads, &mut state, lr).map_err(|e| match e {
                SpnError::Training(m) => {
                    SpnError::Training(format!("{m} at epoch {epoch}, batch {b}"))
                }
                other => other,
            })?;
            model.apply_bn_stats(ctx.bn_stats(), bn_momentum)?;
            loss_sum += loss_v * idx.len() as f64;
            seen += idx.len();
        }
        let eval_acc = match eval_set {
            Some(ds) if !ds.is_empty() => Some(evaluate(model, ds, cfg.batch)?.overall_accuracy),
            _ => None,
        };
        let log = EpochLog {
            epoch,
            lr,
            bn_momentum,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / total as f64,
            eval_acc,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.3} eval {:?}",
            log.train_loss,
            log.train_acc,
            log.eval_acc
        );
        on_epoch(&log);
        logs.push(log);
    }
    let final_metrics = match eval_set {
        Some(ds) if !ds.is_empty() => Some(evaluate(model, ds, cfg.batch)?),
        _ => None,
    };
    Ok(TrainOutcome {
        logs,
        optimizer: state,
        final_metrics,
    })
}
