//! Finite-difference suite over every differentiable tape op and a small
//! two-stage model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::nn::{Ctx, Mode};
use crate::pointcloud::{EdgeFeatureVariant, PointCloud};
use crate::rng::{substream, Stream};
use crate::tensor::{finite_difference_probe, FeatureTensor, GradCheckReport, OpKind, Tape, Var};

pub const GRADCHECK_TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub case: String,
    pub op: String,
    /// Input or parameter holding the worst coordinate.
    pub input: String,
    pub worst_index: usize,
    pub max_rel_error: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

type OpFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Values in ±[0.1, 1] so ReLU inputs stay away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> FeatureTensor {
    FeatureTensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced 0.05 apart in shuffled order, so every max has a
/// clear margin.
fn spaced(rng: &mut ChaCha8Rng, shape: &[usize]) -> FeatureTensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    rand::seq::SliceRandom::shuffle(v.as_mut_slice(), rng);
    FeatureTensor::new(shape, v).expect("shape matches")
}

/// Reduces `out` to a scalar with fixed weights so every output coordinate
/// contributes.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    if shape == [1] {
        return Ok(out);
    }
    let mut rng = substream(seed, Stream::Init, 99);
    let w = tape.constant(FeatureTensor::from_fn(&shape, |_| {
        rng.random_range(-1.0..1.0)
    }));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn check_op(
    case: &str,
    op: OpKind,
    inputs: Vec<(&str, FeatureTensor)>,
    f: &OpFn,
    fault: Option<OpKind>,
) -> Result<CaseResult> {
    let mut tape = Tape::new();
    if let Some(k) = fault {
        tape.inject_fault(k);
    }
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = weighted_sum(&mut tape, out, 7)?;
    tape.backward(loss)?;
    let mut worst: Option<(String, GradCheckReport)> = None;
    for (i, (name, x)) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.len()]);
        let eval = |t: &FeatureTensor| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, (_, u))| tape.constant(if j == i { t.clone() } else { u.clone() }))
                .collect();
            let out = f(&mut tape, &vars)?;
            let loss = weighted_sum(&mut tape, out, 7)?;
            Ok(tape.value(loss).values()[0])
        };
        let r = finite_difference_probe(eval, x, &analytic, EPS, None)?;
        if worst
            .as_ref()
            .is_none_or(|(_, w)| r.max_rel_error > w.max_rel_error)
        {
            worst = Some((name.to_string(), r));
        }
    }
    let (input, r) = worst.expect("at least one input");
    Ok(result(case, op.name(), input, r))
}

fn result(case: &str, op: &str, input: String, r: GradCheckReport) -> CaseResult {
    CaseResult {
        case: case.to_string(),
        op: op.to_string(),
        input,
        worst_index: r.worst_index,
        max_rel_error: r.max_rel_error,
        analytic: r.analytic,
        numeric: r.numeric,
        checked: r.checked,
        passed: r.passes(GRADCHECK_TOL),
    }
}

fn op_cases(fault: Option<OpKind>) -> Result<Vec<CaseResult>> {
    let mut rng = substream(11, Stream::Init, 0);
    let r = &mut rng;
    let mut out = Vec::new();
    let x46 = away_from_zero(r, &[4, 6]);

    out.push(check_op(
        "conv1x1",
        OpKind::Conv1x1,
        vec![
            ("x", x46.clone()),
            ("w", away_from_zero(r, &[6, 5])),
            ("b", away_from_zero(r, &[5])),
        ],
        &|t, v| t.conv1x1(v[0], v[1], v[2]),
        fault,
    )?);
    for g in [1, 2, 3] {
        out.push(check_op(
            &format!("group_conv g={g}"),
            OpKind::GroupConv,
            vec![
                ("x", away_from_zero(r, &[2, 3, 6])),
                ("w", away_from_zero(r, &[g, 6 / g, 6 / g])),
                ("b", away_from_zero(r, &[6])),
            ],
            &|t, v| t.group_conv(v[0], v[1], v[2]),
            fault,
        )?);
    }
    out.push(check_op(
        "relu",
        OpKind::Relu,
        vec![("x", x46.clone())],
        &|t, v| Ok(t.relu(v[0])),
        fault,
    )?);
    let (gamma, beta) = (away_from_zero(r, &[6]), away_from_zero(r, &[6]));
    out.push(check_op(
        "batchnorm train",
        OpKind::BatchNorm,
        vec![
            ("x", away_from_zero(r, &[5, 6])),
            ("gamma", gamma.clone()),
            ("beta", beta.clone()),
        ],
        &|t, v| Ok(t.batch_norm_train(v[0], v[1], v[2])?.0),
        fault,
    )?);
    out.push(check_op(
        "batchnorm eval",
        OpKind::BatchNorm,
        vec![("x", x46.clone()), ("gamma", gamma), ("beta", beta)],
        &|t, v| {
            t.batch_norm_eval(
                v[0],
                v[1],
                v[2],
                &[0.1, -0.2, 0.3, 0.0, 0.5, -0.4],
                &[1.0, 0.5, 2.0, 1.5, 0.8, 1.2],
            )
        },
        fault,
    )?);
    out.push(check_op(
        "maxpool_neighbors",
        OpKind::MaxPool,
        vec![("x", spaced(r, &[3, 4, 5]))],
        &|t, v| t.maxpool_neighbors(v[0]),
        fault,
    )?);
    out.push(check_op(
        "concat_channels",
        OpKind::Concat,
        vec![("a", x46.clone()), ("b", away_from_zero(r, &[4, 2]))],
        &|t, v| t.concat_channels(v[0], v[1]),
        fault,
    )?);
    out.push(check_op(
        "split_groups",
        OpKind::SliceChannels,
        vec![("x", x46.clone())],
        &|t, v| t.slice_channels(v[0], 2, 3),
        fault,
    )?);
    out.push(check_op(
        "channel_shuffle",
        OpKind::ChannelShuffle,
        vec![("x", x46.clone())],
        &|t, v| t.channel_shuffle(v[0], 2),
        fault,
    )?);
    for variant in [
        EdgeFeatureVariant::CenterRelative,
        EdgeFeatureVariant::CenterNeighbor,
        EdgeFeatureVariant::CenterNeighborRelative,
    ] {
        out.push(check_op(
            &format!("edge_features {}", variant.letter()),
            OpKind::EdgeFeatures,
            vec![("x", away_from_zero(r, &[5, 3]))],
            &move |t, v| t.edge_features(v[0], &[0, 3], &[1, 2, 4, 0, 2, 1], variant),
            fault,
        )?);
    }
    out.push(check_op(
        "interpolate_features",
        OpKind::WeightedGather,
        vec![("x", away_from_zero(r, &[3, 4]))],
        &|t, v| {
            t.weighted_gather(
                v[0],
                &[0, 1, 2, 2, 0, 1],
                &[0.5, 0.3, 0.2, 0.6, 0.25, 0.15],
                3,
            )
        },
        fault,
    )?);
    out.push(check_op(
        "reshape",
        OpKind::Reshape,
        vec![("x", x46.clone())],
        &|t, v| t.reshape(v[0], &[2, 2, 6]),
        fault,
    )?);
    out.push(check_op(
        "dropout",
        OpKind::Dropout,
        vec![("x", x46.clone())],
        &|t, v| {
            t.dropout_mask(
                v[0],
                (0..24)
                    .map(|i| if i % 3 == 0 { 0.0 } else { 1.5 })
                    .collect(),
            )
        },
        fault,
    )?);
    out.push(check_op(
        "mul",
        OpKind::Mul,
        vec![("a", x46.clone()), ("b", away_from_zero(r, &[4, 6]))],
        &|t, v| t.mul(v[0], v[1]),
        fault,
    )?);
    out.push(check_op(
        "sum",
        OpKind::Sum,
        vec![("x", x46.clone())],
        &|t, v| Ok(t.sum(v[0])),
        fault,
    )?);
    out.push(check_op(
        "scale",
        OpKind::Scale,
        vec![("x", x46)],
        &|t, v| Ok(t.scale(v[0], -1.7)),
        fault,
    )?);
    out.push(check_op(
        "softmax_cross_entropy",
        OpKind::SoftmaxCrossEntropy,
        vec![("logits", away_from_zero(r, &[4, 5]))],
        &|t, v| t.softmax_cross_entropy(v[0], &[0, 3, 4, 1]),
        fault,
    )?);
    Ok(out)
}

/// Small two-stage classifier used by the model-level check.
pub fn desk_model_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.n_points = 32;
    c.stages[0].n_out = 12;
    c.stages[0].sgc.k = 4;
    c.stages[0].sgc.mlp_widths = vec![8, 8];
    c.stages[1].n_out = 4;
    c.stages[1].sgc.k = 3;
    c.stages[1].sgc.mlp_widths = vec![8, 8];
    c.head_widths = vec![8];
    c.seg_up_widths = vec![vec![8], vec![8]];
    c.dropout_rate = 0.0;
    c
}

fn model_case(fault: Option<OpKind>) -> Result<Vec<CaseResult>> {
    let cfg = desk_model_config();
    let model = Model::classifier(&cfg, 5)?;
    let mut rng = substream(13, Stream::Synth, 0);
    let clouds: Vec<PointCloud> = (0..3)
        .map(|_| {
            let pts: Vec<[f64; 3]> = (0..cfg.n_points)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect();
            PointCloud::from_positions(&pts)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let labels = [0, 2, 3];
    let loss_of = |m: &Model, fault: Option<OpKind>| -> Result<(f64, Ctx)> {
        let mut ctx = Ctx::new(Mode::Train, 0);
        if let Some(k) = fault {
            ctx.tape.inject_fault(k);
        }
        let y = m.forward(&mut ctx, &refs)?;
        let loss = ctx.tape.softmax_cross_entropy(y, &labels)?;
        let v = ctx.tape.value(loss).values()[0];
        ctx.tape.backward(loss)?;
        Ok((v, ctx))
    };
    let (_, ctx) = loss_of(&model, fault)?;
    let grads = ctx.param_grads()?;
    let mut out = Vec::new();
    for name in [
        "stage1.layer1.weight",
        "stage1.layer2.bn.gamma",
        "stage2.layer1.weight",
        "stage2.layer2.bias",
        "head.fc1.weight",
        "head.fc1.bn.beta",
        "head.out.weight",
    ] {
        let x = model.tensor(name).expect("desk model tensor");
        let eval = |t: &FeatureTensor| -> Result<f64> {
            let mut m = model.clone();
            m.update_tensor(name, |dst| *dst = t.clone())?;
            let mut ctx = Ctx::new(Mode::Train, 0);
            let y = m.forward(&mut ctx, &refs)?;
            let loss = ctx.tape.softmax_cross_entropy(y, &labels)?;
            Ok(ctx.tape.value(loss).values()[0])
        };
        let r = finite_difference_probe(eval, &x, &grads[name], EPS, None)?;
        out.push(result(
            &format!("desk model {name}"),
            "model",
            name.to_string(),
            r,
        ));
    }
    Ok(out)
}

/// Runs every case. `fault` flips the backward sign of one op kind.
pub fn gradcheck_suite(fault: Option<OpKind>) -> Result<Vec<CaseResult>> {
    let mut all = op_cases(fault)?;
    all.extend(model_case(fault)?);
    Ok(all)
}
