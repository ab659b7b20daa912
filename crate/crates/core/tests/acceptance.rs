//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the lines show up in `cargo test` output.

mod common;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use spn_core::complexity::{config_complexity, layer_flops, layer_params};
use spn_core::model::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Model, ModelConfig,
    Task,
};
use spn_core::nn::{Ctx, Mode};
use spn_core::pointcloud::io::{read_binary, write_binary};
use spn_core::pointcloud::{
    farthest_point_sample, knn_query, EdgeFeatureVariant, KnnBackend, Labels, NeighborMethod,
    PointCloud,
};
use spn_core::sgc::{shuffle_order, InputGrouping, SgcUnit, SgcUnitConfig};
use spn_core::tensor::{FeatureTensor, Tape};
use spn_core::training::{
    compute_miou, split_holdout, synth_dataset, train, ScheduleConfig, TrainConfig,
};
use spn_core::verify::gradcheck_suite;

use common::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_params() -> Check {
    let dims = [16, 32, 64, 128, 256];
    let mut n = 0;
    for &ci in &dims {
        for &co in &dims {
            for g in [1, 2, 4, 8] {
                let got = layer_params(ci, co, g).map_err(|e| e.to_string())?;
                ensure(got == (ci * co / g) as u64, || {
                    format!("({ci},{co},g={g}) → {got}")
                })?;
                n += 1;
            }
        }
    }
    let spot = layer_params(64, 128, 2).map_err(|e| e.to_string())?;
    ensure(spot == 4096, || format!("spot value {spot}"))?;
    Ok(format!("{n} combinations exact, (64,128,g=2) = {spot}"))
}

fn c2_flops() -> Check {
    let spot = layer_flops(1024, 20, 64, 128, 2).map_err(|e| e.to_string())?;
    ensure(spot == 83_886_080, || format!("spot value {spot}"))?;
    let dims = [16, 32, 64, 128, 256];
    for &ci in &dims {
        for &co in &dims {
            for g in [1, 2, 4, 8] {
                for (n, k) in [(1, 1), (1024, 20), (2048, 32)] {
                    let fg = layer_flops(n, k, ci, co, g).map_err(|e| e.to_string())?;
                    let f1 = layer_flops(n, k, ci, co, 1).map_err(|e| e.to_string())?;
                    ensure(fg * g as u64 == f1, || {
                        format!("identity fails at ({n},{k},{ci},{co},g={g})")
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "flops(1024,20,64,128,2) = {spot}, identity holds on sweep"
    ))
}

fn conv(x: &[f64], rows: usize, g: usize, ci: usize, co: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut t = Tape::new();
    let xv = t.constant(FeatureTensor::new(&[rows, g * ci], x.to_vec()).unwrap());
    let wv = t.constant(FeatureTensor::new(&[g, ci, co], w.to_vec()).unwrap());
    let bv = t.constant(FeatureTensor::new(&[g * co], b.to_vec()).unwrap());
    let y = t.group_conv(xv, wv, bv).unwrap();
    t.value(y).values().to_vec()
}

fn c3_group_conv() -> Check {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for inst in 0..50 {
        let g = [2, 4, 8][inst % 3];
        let (ci, co, rows) = (
            r.random_range(1..9),
            r.random_range(1..9),
            r.random_range(1..20),
        );
        let x: Vec<f64> = (0..rows * g * ci)
            .map(|_| r.random_range(-3.0..3.0))
            .collect();
        let w: Vec<f64> = (0..g * ci * co)
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let b: Vec<f64> = (0..g * co).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = conv(&x, rows, g, ci, co, &w, &b);
        let want = dense(&x, rows, g * ci, g * co, &block_diag(&w, g, ci, co), &b);
        for (a, e) in got.iter().zip(&want) {
            worst = worst.max((a - e).abs());
        }
    }
    ensure(worst < 1e-12, || format!("max |Δ| = {worst:e}"))?;
    for _ in 0..50 {
        let (ci, co, rows) = (
            r.random_range(1..17),
            r.random_range(1..17),
            r.random_range(1..20),
        );
        let x: Vec<f64> = (0..rows * ci).map(|_| r.random_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..ci * co).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..co).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = conv(&x, rows, 1, ci, co, &w, &b);
        let mut t = Tape::new();
        let xv = t.constant(FeatureTensor::new(&[rows, ci], x.clone()).unwrap());
        let wv = t.constant(FeatureTensor::new(&[ci, co], w.clone()).unwrap());
        let bv = t.constant(FeatureTensor::new(&[co], b.clone()).unwrap());
        let y = t.conv1x1(xv, wv, bv).unwrap();
        ensure(t.value(y).values() == got.as_slice(), || {
            "g=1 differs from conv1x1".into()
        })?;
        ensure(dense(&x, rows, ci, co, &w, &b) == got, || {
            "g=1 differs from dense oracle".into()
        })?;
    }
    Ok(format!("g∈{{2,4,8}} max |Δ| = {worst:.1e}; g=1 bit-exact"))
}

fn c4_shuffle() -> Check {
    let mut r = rng(4);
    for c in [4, 6, 8, 12, 16, 24, 32, 64] {
        let x = FeatureTensor::from_fn(&[3, c], |_| r.random_range(-1.0..1.0));
        for g in (1..=c).filter(|g| c % g == 0) {
            let mut t = Tape::new();
            let v = t.constant(x.clone());
            let s = t.channel_shuffle(v, g).unwrap();
            let back = t.channel_shuffle(s, c / g).unwrap();
            ensure(t.value(back).values() == x.values(), || {
                format!("C={c}, g={g}: not an inverse")
            })?;
            if g == 1 || g == c {
                ensure(t.value(s).values() == x.values(), || {
                    format!("C={c}, g={g}: not identity")
                })?;
            }
        }
    }
    let order = shuffle_order(6, 2).map_err(|e| e.to_string())?;
    ensure(order == [0, 3, 1, 4, 2, 5], || {
        format!("C=6, g=2 → {order:?}")
    })?;
    Ok(format!("inverse bit-exact; C=6,g=2 → {order:?}"))
}

fn c5_knn() -> Check {
    let mut r = rng(5);
    let mut rows = 0;
    for cloud in 0..100 {
        let n = r.random_range(2..=2000);
        let k = r.random_range(1..=32.min(n - 1));
        let mut pts = uniform_points(&mut r, n);
        if cloud % 4 == 0 {
            // Lattice coordinates to force distance ties.
            pts.iter_mut()
                .for_each(|p| p.iter_mut().for_each(|v| *v = (*v * 4.0).round()));
        }
        let centers: Vec<usize> = (0..n).collect();
        let brute =
            knn_query(&pts, &centers, k, KnnBackend::BruteForce).map_err(|e| e.to_string())?;
        let tree = knn_query(&pts, &centers, k, KnnBackend::KdTree).map_err(|e| e.to_string())?;
        for q in 0..n {
            let want = knn_oracle(&pts, q, k);
            ensure(brute.row(q) == want.as_slice(), || {
                format!("cloud {cloud} row {q}: brute force differs")
            })?;
            ensure(tree.row(q) == want.as_slice(), || {
                format!("cloud {cloud} row {q}: k-d tree differs")
            })?;
        }
        rows += n;
    }
    Ok(format!("100 clouds, {rows} rows identical"))
}

fn c6_fps() -> Check {
    let mut r = rng(6);
    for c in 0..200 {
        let n = r.random_range(1..=64);
        let m = r.random_range(1..=n);
        let pts = uniform_points(&mut r, n);
        let picks = farthest_point_sample(&pts, m).map_err(|e| e.to_string())?;
        if let Some(v) = fps_violation(&pts, &picks) {
            return Err(format!("cloud {c}: {v}"));
        }
    }
    let line: Vec<[f64; 3]> = (0..8).map(|i| [i as f64, 0.0, 0.0]).collect();
    let mut ends = farthest_point_sample(&line, 2).map_err(|e| e.to_string())?;
    ends.sort();
    ensure(ends == [0, 7], || format!("collinear → {ends:?}"))?;
    Ok("200 clouds satisfy the step oracle; collinear → {0, 7}".into())
}

fn c7_gradients() -> Check {
    let cases = gradcheck_suite(None).map_err(|e| e.to_string())?;
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    if let Some(c) = cases.iter().find(|c| !c.passed) {
        return Err(format!(
            "{} ({}) rel {:.2e}",
            c.case, c.input, c.max_rel_error
        ));
    }
    Ok(format!(
        "{} cases, worst rel error {worst:.1e}",
        cases.len()
    ))
}

fn c8_permutation() -> Check {
    let cfg = ModelConfig::default();
    let model = Model::classifier(&cfg, 8).map_err(|e| e.to_string())?;
    let mut r = rng(8);
    let pts = uniform_points(&mut r, cfg.n_points);
    let cloud = PointCloud::from_positions(&pts).map_err(|e| e.to_string())?;
    let base = model.predict(&cloud).map_err(|e| e.to_string())?;
    for trial in 0..20 {
        let mut perm: Vec<usize> = (0..cfg.n_points).collect();
        perm.shuffle(&mut r);
        let got = model
            .predict(&cloud.permuted(&perm).unwrap())
            .map_err(|e| e.to_string())?;
        ensure(got.values() == base.values(), || {
            format!("permutation {trial} changed logits")
        })?;
    }
    let ucfg = SgcUnitConfig {
        groups: 2,
        mlp_widths: vec![16, 16, 32],
        edge_variant: EdgeFeatureVariant::CenterRelative,
        k: 10,
        input_grouping: InputGrouping::Split,
    };
    let unit = SgcUnit::new("u", 6, &ucfg, true, &mut r).map_err(|e| e.to_string())?;
    let edges = FeatureTensor::from_fn(&[12, 10, 6], |_| r.random_range(-1.0..1.0));
    let run = |t: &FeatureTensor| {
        let mut ctx = Ctx::new(Mode::Eval, 0);
        let v = ctx.tape.constant(t.clone());
        let y = unit.forward(&mut ctx, v).unwrap();
        ctx.tape.value(y).values().to_vec()
    };
    let want = run(&edges);
    for trial in 0..20 {
        let mut perm: Vec<usize> = (0..10).collect();
        perm.shuffle(&mut r);
        let mut p = edges.clone();
        for m in 0..12 {
            for (dst, &src) in perm.iter().enumerate() {
                for c in 0..6 {
                    p.values_mut()[(m * 10 + dst) * 6 + c] = edges.values()[(m * 10 + src) * 6 + c];
                }
            }
        }
        ensure(run(&p) == want, || {
            format!("neighbor permutation {trial} changed SGC output")
        })?;
    }
    Ok("20 point permutations and 20 neighbor permutations bit-exact".into())
}

fn c9_schedules() -> Check {
    let s = ScheduleConfig::default();
    ensure(s.lr(0) == 0.001, || format!("lr(0) = {}", s.lr(0)))?;
    ensure(s.lr(20) == 0.0007, || format!("lr(20) = {}", s.lr(20)))?;
    let first_floor = (0..10_000)
        .find(|&e| s.lr(e) == 1e-5)
        .ok_or("floor never reached")?;
    ensure((first_floor..10_000).all(|e| s.lr(e) == 1e-5), || {
        "floor not held".into()
    })?;
    ensure(s.bn_momentum(0) == 0.9, || {
        format!("bn(0) = {}", s.bn_momentum(0))
    })?;
    ensure(
        (0..10_000).all(|e| s.bn_momentum(e) <= 0.99 && s.bn_momentum(e + 1) >= s.bn_momentum(e)),
        || "bn momentum not capped/monotone".into(),
    )?;
    ensure(s.bn_momentum(10_000) == 0.99, || "cap not reached".into())?;
    Ok(format!(
        "lr floor from epoch {first_floor}, bn(20) = {}",
        s.bn_momentum(20)
    ))
}

fn c10_learning() -> Check {
    let ds = synth_dataset(200, 256, 42).map_err(|e| e.to_string())?;
    let (tr, held) = split_holdout(&ds, 0.2, 42).map_err(|e| e.to_string())?;
    let mut model = Model::classifier(&ModelConfig::default(), 42).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let out = train(&mut model, &tr, Some(&held), &cfg, |_| {}).map_err(|e| e.to_string())?;
    let acc = out
        .final_metrics
        .as_ref()
        .map(|m| m.overall_accuracy)
        .unwrap_or(0.0);
    let (l1, l10) = (out.logs[0].train_loss, out.logs[9].train_loss);
    ensure(l10 < l1, || {
        format!("epoch-10 loss {l10:.4} ≥ epoch-1 loss {l1:.4}")
    })?;
    ensure(acc > 0.9, || format!("held-out accuracy {acc:.4}"))?;
    Ok(format!(
        "held-out OA {acc:.4} on {} clouds; loss epoch 1 {l1:.4} → epoch 10 {l10:.4}",
        held.len()
    ))
}

fn c11_ablations() -> Check {
    let mut flops = Vec::new();
    for g in [1, 2, 4, 8] {
        let cfg = ModelConfig::default()
            .with_groups(g)
            .with_input_grouping(InputGrouping::Shared);
        flops.push(
            config_complexity(&cfg, Task::Classify, 256)
                .map_err(|e| e.to_string())?
                .grouped_flops,
        );
    }
    ensure(flops.windows(2).all(|w| w[1] < w[0]), || {
        format!("grouped flops {flops:?}")
    })?;
    let ds = synth_dataset(40, 256, 11).map_err(|e| e.to_string())?;
    let (tr, held) = split_holdout(&ds, 0.2, 11).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        epochs: 10,
        batch: 16,
        ..TrainConfig::default()
    };
    let mut summary = Vec::new();
    let variants = [
        (
            "A/knn",
            EdgeFeatureVariant::CenterRelative,
            NeighborMethod::Knn,
        ),
        (
            "B/knn",
            EdgeFeatureVariant::CenterNeighbor,
            NeighborMethod::Knn,
        ),
        (
            "C/knn",
            EdgeFeatureVariant::CenterNeighborRelative,
            NeighborMethod::Knn,
        ),
        (
            "A/radius",
            EdgeFeatureVariant::CenterRelative,
            NeighborMethod::Radius,
        ),
    ];
    for (name, v, nb) in variants {
        let mut cfg = ModelConfig::default()
            .with_edge_variant(v)
            .with_input_grouping(InputGrouping::Shared);
        cfg.neighbor = nb;
        let mut m = Model::classifier(&cfg, 11).map_err(|e| format!("{name}: {e}"))?;
        let out =
            train(&mut m, &tr, Some(&held), &tc, |_| {}).map_err(|e| format!("{name}: {e}"))?;
        let acc = out
            .final_metrics
            .map(|m| m.overall_accuracy)
            .ok_or(format!("{name}: no metrics"))?;
        summary.push(format!("{name} {acc:.2}"));
    }
    Ok(format!(
        "grouped flops {flops:?}; OA {}",
        summary.join(", ")
    ))
}

fn c12_miou() -> Check {
    let mut r = rng(12);
    for s in 0..100 {
        let parts = r.random_range(1..5);
        let set: Vec<usize> = (0..parts).map(|p| 3 + p).collect();
        let sets = vec![vec![0, 1, 2], set.clone()];
        let n = r.random_range(1..30);
        let pred: Vec<usize> = (0..n).map(|_| set[r.random_range(0..parts)]).collect();
        let truth: Vec<usize> = (0..n).map(|_| set[r.random_range(0..parts)]).collect();
        let got = compute_miou(&pred, &truth, 1, &sets)
            .map_err(|e| e.to_string())?
            .iou;
        let want = miou_oracle(&pred, &truth, &set);
        ensure((got - want).abs() < 1e-15, || {
            format!("set {s}: {got} vs {want}")
        })?;
    }
    let hand =
        compute_miou(&[0, 0, 0, 0], &[0, 0, 1, 1], 0, &[vec![0, 1]]).map_err(|e| e.to_string())?;
    ensure(hand.iou == 0.25, || format!("hand case {}", hand.iou))?;
    Ok("100 label sets match; hand case = 0.25".into())
}

#[allow(clippy::field_reassign_with_default)]
fn c13_determinism() -> Check {
    let ds = synth_dataset(8, 64, 13).map_err(|e| e.to_string())?;
    let mut cfg = ModelConfig::default();
    cfg.n_points = 64;
    let tc = TrainConfig {
        epochs: 2,
        batch: 8,
        seed: 13,
        ..TrainConfig::default()
    };
    let run = || -> Result<Vec<u8>, String> {
        let mut m = Model::classifier(&cfg, 13).map_err(|e| e.to_string())?;
        train(&mut m, &ds, None, &tc, |_| {}).map_err(|e| e.to_string())?;
        encode_checkpoint(&m).map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "same-seed checkpoints differ".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mpath = dir.path().join("m.spnm");
    let model = decode_checkpoint(&a, "mem").map_err(|e| e.to_string())?;
    write_checkpoint(&mpath, &model).map_err(|e| e.to_string())?;
    let back = read_checkpoint(&mpath).map_err(|e| e.to_string())?;
    ensure(
        encode_checkpoint(&back).map_err(|e| e.to_string())? == a,
        || "checkpoint round trip differs".into(),
    )?;

    let mut r = rng(13);
    for (i, labels) in [
        Labels::None,
        Labels::PerCloud(-3),
        Labels::PerPoint((0..50).collect()),
    ]
    .into_iter()
    .enumerate()
    {
        let data: Vec<f64> = (0..50 * 5).map(|_| r.random_range(-1e3..1e3)).collect();
        let cloud = PointCloud::new(50, 5, data)
            .unwrap()
            .with_labels(labels)
            .unwrap();
        let p = dir.path().join(format!("c{i}.spnc"));
        write_binary(&p, &cloud).map_err(|e| e.to_string())?;
        let back = read_binary(&p).map_err(|e| e.to_string())?;
        let bits = |c: &PointCloud| c.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(
            bits(&back) == bits(&cloud) && back.labels() == cloud.labels(),
            || format!("cloud {i} round trip differs"),
        )?;
    }
    Ok(format!(
        "checkpoints identical ({} bytes); files round-trip bit-exactly",
        a.len()
    ))
}

fn main() {
    let criteria: [Criterion; 13] = [
        (
            "1 param formula exactness",
            c1_params,
            Duration::from_secs(1),
        ),
        ("2 FLOP formula exactness", c2_flops, Duration::from_secs(1)),
        (
            "3 group-conv equivalence",
            c3_group_conv,
            Duration::from_secs(10),
        ),
        (
            "4 channel-shuffle algebra",
            c4_shuffle,
            Duration::from_secs(1),
        ),
        ("5 k-NN oracle", c5_knn, Duration::from_secs(30)),
        ("6 FPS oracle", c6_fps, Duration::from_secs(5)),
        ("7 gradient suite", c7_gradients, Duration::from_secs(60)),
        (
            "8 permutation invariance",
            c8_permutation,
            Duration::from_secs(30),
        ),
        ("9 schedules", c9_schedules, Duration::from_secs(1)),
        (
            "10 desk-scale learning",
            c10_learning,
            Duration::from_secs(600),
        ),
        (
            "11 ablation directionality",
            c11_ablations,
            Duration::from_secs(1800),
        ),
        ("12 mIoU oracle", c12_miou, Duration::from_secs(5)),
        (
            "13 determinism and formats",
            c13_determinism,
            Duration::from_secs(120),
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let id = name.split(' ').next().unwrap();
        if !filter.is_empty() && !filter.iter().any(|x| x == id) {
            continue;
        }
        let t0 = Instant::now();
        let res = f();
        let dt = t0.elapsed();
        let res = match res {
            Ok(m) if dt > limit => Err(format!("{m}; took {dt:.1?}, limit {limit:?}")),
            other => other,
        };
        match res {
            Ok(m) => println!("PASS  criterion {name}: {m} [{dt:.2?}]"),
            Err(m) => {
                failed += 1;
                println!("FAIL  criterion {name}: {m} [{dt:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
