//! Analytic parameter and FLOP counts, plus a forward-time harness.
//!
//! One multiply-add counts as one FLOP. Bias, batch norm, activation and
//! pooling work is kept out of `flops` and reported as `other_ops`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpnError};
use crate::model::{Model, ModelConfig, Task};
use crate::nn::{Ctx, Mode, Module};
use crate::parallel;
use crate::pointcloud::PointCloud;

fn check_groups(c_in: usize, c_out: usize, g: usize) -> Result<()> {
    if g == 0 || c_in == 0 || c_out == 0 || !c_in.is_multiple_of(g) || !c_out.is_multiple_of(g) {
        return Err(SpnError::Config(format!(
            "g={g} must divide both c_in={c_in} and c_out={c_out}"
        )));
    }
    Ok(())
}

/// Weights of a grouped 1×1 convolution: `(c_in/g)·(c_out/g)·g`.
pub fn layer_params(c_in: usize, c_out: usize, g: usize) -> Result<u64> {
    check_groups(c_in, c_out, g)?;
    Ok((c_in / g) as u64 * (c_out / g) as u64 * g as u64)
}

/// Multiply-adds of a grouped 1×1 convolution over `n` points with `k`
/// neighbors each: `n·k·c_in·c_out/g`.
pub fn layer_flops(n: usize, k: usize, c_in: usize, c_out: usize, g: usize) -> Result<u64> {
    check_groups(c_in, c_out, g)?;
    if n == 0 || k == 0 {
        return Err(SpnError::Config(format!(
            "n and k must be ≥ 1, got n={n}, k={k}"
        )));
    }
    Ok(n as u64 * k as u64 * (c_in / g) as u64 * c_out as u64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer: String,
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    /// Rows the layer is applied to, and neighbors per row.
    pub n: usize,
    pub k: usize,
    /// Convolution weights.
    pub weight_params: u64,
    /// Bias and batch-norm scale/shift.
    pub other_params: u64,
    pub params: u64,
    pub flops: u64,
    pub other_ops: u64,
    /// Part of an SGC unit (as opposed to head or decoder).
    pub grouped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub trials: usize,
    pub warmup: usize,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub iqr_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub task: Task,
    pub n_points: usize,
    pub params: u64,
    pub weight_params: u64,
    pub other_params: u64,
    pub flops: u64,
    pub grouped_flops: u64,
    pub other_ops: u64,
    pub forward_time_ms: Option<TimingSummary>,
    pub per_layer: Vec<LayerRow>,
}

struct RowSpec {
    name: String,
    c_in: usize,
    c_out: usize,
    g: usize,
    n: usize,
    k: usize,
    bn: bool,
    act: bool,
    grouped: bool,
    /// Max-pool over `k` after this layer.
    pooled: bool,
}

fn row(spec: RowSpec) -> Result<LayerRow> {
    let where_ = |e: SpnError| SpnError::Config(format!("{}: {e}", spec.name));
    let weight_params = layer_params(spec.c_in, spec.c_out, spec.g).map_err(where_)?;
    let flops = layer_flops(spec.n, spec.k, spec.c_in, spec.c_out, spec.g).map_err(where_)?;
    let co = spec.c_out as u64;
    let other_params = co + if spec.bn { 2 * co } else { 0 };
    let elems = (spec.n * spec.k) as u64 * co;
    let per_elem = 1 + if spec.bn { 2 } else { 0 } + u64::from(spec.act);
    let pool = if spec.pooled {
        (spec.n * (spec.k - 1)) as u64 * co
    } else {
        0
    };
    Ok(LayerRow {
        layer: spec.name,
        c_in: spec.c_in,
        c_out: spec.c_out,
        groups: spec.g,
        n: spec.n,
        k: spec.k,
        weight_params,
        other_params,
        params: weight_params + other_params,
        flops,
        other_ops: elems * per_elem + pool,
        grouped: spec.grouped,
    })
}

/// Analytic report for a configuration. Unlike model construction this
/// accepts a configuration without encoder stages.
pub fn config_complexity(
    cfg: &ModelConfig,
    task: Task,
    n_points: usize,
) -> Result<ComplexityReport> {
    let mut cfg_n = cfg.clone();
    cfg_n.n_points = n_points;
    cfg_n.validate_layers()?;
    if task == Task::Segment && cfg.seg_up_widths.len() != cfg.stages.len() {
        return Err(SpnError::Config(format!(
            "segmenter needs one decoder width list per stage: {} stages, {} lists",
            cfg.stages.len(),
            cfg.seg_up_widths.len()
        )));
    }
    let bn = cfg.batch_norm;
    let mut rows = Vec::new();
    let spec = |name: String, c_in, c_out, g, n, k, bn, act, grouped, pooled| RowSpec {
        name,
        c_in,
        c_out,
        g,
        n,
        k,
        bn,
        act,
        grouped,
        pooled,
    };
    for (s, st) in cfg.stages.iter().enumerate() {
        let (_, mut cin) = cfg.stage_channels(s);
        let last = st.sgc.mlp_widths.len() - 1;
        for (l, &w) in st.sgc.mlp_widths.iter().enumerate() {
            rows.push(row(spec(
                format!("stage{}.layer{}", s + 1, l + 1),
                cin,
                w,
                st.sgc.layer_groups(l),
                st.n_out,
                st.k(),
                bn,
                true,
                true,
                l == last,
            ))?);
            cin = w;
        }
    }
    let mut cin = cfg.encoder_out_channels();
    match task {
        Task::Classify => {
            for (i, &w) in cfg.head_widths.iter().enumerate() {
                rows.push(row(spec(
                    format!("head.fc{}", i + 1),
                    cin,
                    w,
                    1,
                    1,
                    1,
                    bn,
                    true,
                    false,
                    false,
                ))?);
                cin = w;
            }
            rows.push(row(spec(
                "head.out".into(),
                cin,
                cfg.n_classes,
                1,
                1,
                1,
                false,
                false,
                false,
                false,
            ))?);
        }
        Task::Segment => {
            let n = cfg.stages.len();
            for (step, widths) in cfg.seg_up_widths.iter().enumerate() {
                let level = n - 1 - step;
                let (skip, n_fine) = if level == 0 {
                    (cfg.in_channels, n_points)
                } else {
                    (
                        cfg.stages[level - 1].sgc.out_channels(),
                        cfg.stages[level - 1].n_out,
                    )
                };
                cin += skip;
                for (l, &w) in widths.iter().enumerate() {
                    rows.push(row(spec(
                        format!("decoder{}.layer{}", step + 1, l + 1),
                        cin,
                        w,
                        1,
                        n_fine,
                        1,
                        bn,
                        true,
                        false,
                        false,
                    ))?);
                    cin = w;
                }
            }
            rows.push(row(spec(
                "seg.out".into(),
                cin,
                cfg.n_classes,
                1,
                n_points,
                1,
                false,
                false,
                false,
                false,
            ))?);
        }
    }
    Ok(ComplexityReport::from_rows(task, n_points, rows))
}

impl ComplexityReport {
    pub fn from_rows(task: Task, n_points: usize, per_layer: Vec<LayerRow>) -> Self {
        let sum = |f: fn(&LayerRow) -> u64| per_layer.iter().map(f).sum::<u64>();
        Self {
            task,
            n_points,
            params: sum(|r| r.params),
            weight_params: sum(|r| r.weight_params),
            other_params: sum(|r| r.other_params),
            flops: sum(|r| r.flops),
            grouped_flops: per_layer
                .iter()
                .filter(|r| r.grouped)
                .map(|r| r.flops)
                .sum(),
            other_ops: sum(|r| r.other_ops),
            forward_time_ms: None,
            per_layer,
        }
    }

    /// Key-sorted JSON.
    pub fn to_json(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    pub fn to_table(&self) -> String {
        let header = [
            "layer",
            "c_in",
            "c_out",
            "g",
            "n",
            "k",
            "weights",
            "other",
            "params",
            "flops",
            "other_ops",
        ];
        let mut cells: Vec<Vec<String>> = self
            .per_layer
            .iter()
            .map(|r| {
                vec![
                    r.layer.clone(),
                    r.c_in.to_string(),
                    r.c_out.to_string(),
                    r.groups.to_string(),
                    r.n.to_string(),
                    r.k.to_string(),
                    r.weight_params.to_string(),
                    r.other_params.to_string(),
                    r.params.to_string(),
                    r.flops.to_string(),
                    r.other_ops.to_string(),
                ]
            })
            .collect();
        let blank = String::new;
        cells.push(vec![
            "total".into(),
            blank(),
            blank(),
            blank(),
            blank(),
            blank(),
            self.weight_params.to_string(),
            self.other_params.to_string(),
            self.params.to_string(),
            self.flops.to_string(),
            self.other_ops.to_string(),
        ]);
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                cells
                    .iter()
                    .map(|r| r[c].len())
                    .chain([header[c].len()])
                    .max()
                    .unwrap()
            })
            .collect();
        let fmt_row = |r: &[String]| {
            r.iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (s, w))| {
                    if i == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        let mut out = fmt_row(&header);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for r in &cells {
            out.push_str(&fmt_row(r));
            out.push('\n');
        }
        out.push_str(&format!("grouped-layer flops: {}\n", self.grouped_flops));
        if let Some(t) = &self.forward_time_ms {
            out.push_str(&format!(
                "forward time: median {:.3} ms, IQR {:.3} ms over {} trials\n",
                t.median_ms, t.iqr_ms, t.trials
            ));
        }
        out
    }
}

/// Report for a built model at `n_points` input points.
pub fn model_complexity(model: &Model, n_points: usize) -> Result<ComplexityReport> {
    let report = config_complexity(&model.config, model.task, n_points)?;
    let census = model.param_count() as u64;
    if census != report.params {
        return Err(SpnError::Verification(format!(
            "analytic parameter count {} disagrees with model census {census}",
            report.params
        )));
    }
    Ok(report)
}

/// Linear-interpolated quantile of sorted samples.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Wall-clock eval-mode forward time on one thread. Numbers depend on the
/// machine and its load.
pub fn measure_forward_time(
    model: &Model,
    cloud: &PointCloud,
    trials: usize,
    warmup: usize,
) -> Result<TimingSummary> {
    if trials < 3 {
        return Err(SpnError::Config(format!(
            "need at least 3 timing trials, got {trials}"
        )));
    }
    parallel::sequential(|| {
        let run = || -> Result<f64> {
            let t0 = Instant::now();
            let mut ctx = Ctx::new(Mode::Eval, 0);
            model.forward(&mut ctx, &[cloud])?;
            Ok(t0.elapsed().as_secs_f64() * 1e3)
        };
        for _ in 0..warmup {
            run()?;
        }
        let samples = (0..trials).map(|_| run()).collect::<Result<Vec<_>>>()?;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.75));
        Ok(TimingSummary {
            trials,
            warmup,
            median_ms: quantile(&sorted, 0.5),
            q1_ms: q1,
            q3_ms: q3,
            iqr_ms: q3 - q1,
            samples_ms: samples,
        })
    })
}
