use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use spn_core::complexity::{config_complexity, measure_forward_time, model_complexity};
use spn_core::model::{read_checkpoint, write_checkpoint, Model, ModelConfig, Task};
use spn_core::pointcloud::io::{read_cloud, read_text, write_binary, write_text, TextLabels};
use spn_core::pointcloud::{
    knn_query, EdgeFeatureVariant, KnnBackend, Labels, NeighborMethod, Point3, PointCloud,
};
use spn_core::rng::{substream, Stream};
use spn_core::sgc::InputGrouping;
use spn_core::tensor::OpKind;
use spn_core::training::{evaluate, split_holdout, synth_dataset, train, Dataset, TrainConfig};
use spn_core::verify::gradcheck_suite;
use spn_core::{Result, SpnError};

use crate::args::*;

fn task_of(t: TaskArg) -> Task {
    match t {
        TaskArg::Classify => Task::Classify,
        TaskArg::Segment => Task::Segment,
    }
}

pub fn build_config(a: &ModelArgs) -> ModelConfig {
    let mut cfg = ModelConfig::default();
    if let Some(g) = a.groups {
        cfg = cfg.with_groups(g);
    }
    if let Some(v) = a.edge_variant {
        cfg = cfg.with_edge_variant(match v {
            EdgeVariantArg::A => EdgeFeatureVariant::CenterRelative,
            EdgeVariantArg::B => EdgeFeatureVariant::CenterNeighbor,
            EdgeVariantArg::C => EdgeFeatureVariant::CenterNeighborRelative,
        });
    }
    if a.shared_input {
        cfg = cfg.with_input_grouping(InputGrouping::Shared);
    }
    if let Some(k) = a.k {
        cfg.stages.iter_mut().for_each(|s| s.sgc.k = k);
    }
    if let Some(n) = a.points {
        cfg.n_points = n;
    }
    if let Some(nb) = a.neighbor {
        cfg.neighbor = match nb {
            NeighborArg::Knn => NeighborMethod::Knn,
            NeighborArg::Radius => NeighborMethod::Radius,
        };
    }
    if let Some(r) = a.radius {
        cfg.radius = r;
    }
    cfg
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SpnError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| SpnError::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    // Through Value so keys come out sorted.
    let v = serde_json::to_value(v).expect("serializable");
    serde_json::to_string_pretty(&v).expect("serializable") + "\n"
}

fn cloud_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| SpnError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| SpnError::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("spnc" | "txt")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads `--synth` or `--data` as a dataset for `task`.
pub fn load_dataset(a: &DataArgs, task: Task, n_points: usize, seed: u64) -> Result<Dataset> {
    if a.synth {
        return synth_dataset(a.per_class, n_points, seed);
    }
    let path = a
        .data
        .as_ref()
        .ok_or_else(|| SpnError::Usage("pass --synth or --data PATH".into()))?;
    if !path.exists() {
        return Err(SpnError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    let (files, part_sets) = if path.is_dir() {
        let ps = path.join("part_sets.json");
        let part_sets = if ps.exists() {
            let src = fs::read_to_string(&ps).map_err(|e| SpnError::io(&ps, e))?;
            Some(
                serde_json::from_str::<Vec<Vec<usize>>>(&src)
                    .map_err(|e| SpnError::format(ps.display().to_string(), e.to_string()))?,
            )
        } else {
            None
        };
        (cloud_files(path)?, part_sets)
    } else {
        (vec![path.clone()], None)
    };
    if files.is_empty() {
        return Err(SpnError::Input(format!(
            "{} holds no .spnc or .txt clouds",
            path.display()
        )));
    }
    let clouds = files
        .iter()
        .map(|f| Ok((f.display().to_string(), read_cloud(f)?)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_clouds(clouds, task, part_sets)
}

fn output_classes(ds: &Dataset, task: Task) -> usize {
    match task {
        Task::Classify => ds.n_classes,
        Task::Segment => ds.n_parts(),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let task = task_of(a.task);
    let mut cfg = build_config(&a.model);
    let ds = load_dataset(&a.data, task, cfg.n_points, a.seed)?;
    cfg.n_points = ds.samples[0].cloud.len();
    cfg.in_channels = ds.samples[0].cloud.channels();
    cfg.n_classes = output_classes(&ds, task).max(2);
    let (train_set, held) = split_holdout(&ds, a.holdout, a.seed)?;
    let mut model = Model::build(&cfg, task, a.seed)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        seed: a.seed,
        ..TrainConfig::default()
    };
    create_dir(&a.out)?;
    let log_path = a.out.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| SpnError::io(&log_path, e))?;
    let mut log_err = None;
    let outcome = train(&mut model, &train_set, Some(&held), &tc, |l| {
        let line = serde_json::to_string(&serde_json::to_value(l).expect("serializable"))
            .expect("serializable");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
        println!("{line}");
    })?;
    if let Some(e) = log_err {
        return Err(SpnError::io(&log_path, e));
    }
    write_checkpoint(&a.out.join("model.spnm"), &model)?;
    if let Some(m) = &outcome.final_metrics {
        write_file(&a.out.join("metrics.json"), to_json(m))?;
        println!(
            "held-out: overall accuracy {:.4}, mean class accuracy {:.4}{}",
            m.overall_accuracy,
            m.mean_class_accuracy,
            m.miou.map(|v| format!(", mIoU {v:.4}")).unwrap_or_default()
        );
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = read_checkpoint(&a.model)?;
    let ds = load_dataset(&a.data, model.task, model.config.n_points, a.seed)?;
    let m = evaluate(&model, &ds, a.batch)?;
    let json = to_json(&m);
    print!("{json}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("metrics.json"), json)?;
    }
    Ok(())
}

pub fn cmd_segment(a: &SegmentArgs) -> Result<()> {
    let model = read_checkpoint(&a.model)?;
    if model.task != Task::Segment {
        return Err(SpnError::Usage(format!(
            "{} is not a segmenter",
            a.model.display()
        )));
    }
    let mut cloud = read_cloud(&a.data)?;
    if cloud.channels() != model.config.in_channels {
        // Text clouds may come without a label column.
        cloud = read_text(&a.data, TextLabels::None)?;
    }
    let logits = model.predict(&cloud)?;
    let l = logits.channels();
    let labels: Vec<i64> = logits
        .values()
        .chunks(l)
        .map(|r| {
            let mut best = 0;
            for c in 1..l {
                if r[c] > r[best] {
                    best = c;
                }
            }
            best as i64
        })
        .collect();
    let out = cloud.with_labels(Labels::PerPoint(labels))?;
    write_text(&a.out, &out)
}

pub fn cmd_complexity(a: &ComplexityArgs) -> Result<()> {
    let task = task_of(a.task);
    let cfg = build_config(&a.model);
    let groups = a.sweep_groups.clone().unwrap_or_default();
    let (json, text) = if groups.is_empty() {
        let mut report = config_complexity(&cfg, task, cfg.n_points)?;
        if a.time {
            let model = Model::build(&cfg, task, a.seed)?;
            report = model_complexity(&model, cfg.n_points)?;
            let cloud = timing_cloud(cfg.n_points, a.seed)?;
            report.forward_time_ms = Some(measure_forward_time(&model, &cloud, 7, 2)?);
        }
        (report.to_json() + "\n", report.to_table())
    } else {
        let mut rows = Vec::new();
        for &g in &groups {
            let c = cfg.clone().with_groups(g);
            let r = config_complexity(&c, task, c.n_points).map_err(|e| match e {
                SpnError::Config(m) => SpnError::Config(format!("g={g}: {m}")),
                other => other,
            })?;
            rows.push(serde_json::json!({
                "groups": g,
                "params": r.params,
                "flops": r.flops,
                "grouped_flops": r.grouped_flops,
                "other_ops": r.other_ops,
            }));
        }
        let json = serde_json::to_string_pretty(&serde_json::json!({ "sweep": rows }))
            .expect("json")
            + "\n";
        let mut text = String::new();
        text.push_str(&format!(
            "{:>6}  {:>12}  {:>14}  {:>14}\n",
            "g", "params", "flops", "grouped_flops"
        ));
        for r in &rows {
            text.push_str(&format!(
                "{:>6}  {:>12}  {:>14}  {:>14}\n",
                r["groups"].as_u64().unwrap_or(0),
                r["params"].as_u64().unwrap_or(0),
                r["flops"].as_u64().unwrap_or(0),
                r["grouped_flops"].as_u64().unwrap_or(0)
            ));
        }
        (json, text)
    };
    print!("{text}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("complexity.json"), &json)?;
        write_file(&dir.join("complexity.txt"), &text)?;
    }
    Ok(())
}

fn timing_cloud(n: usize, seed: u64) -> Result<PointCloud> {
    let ds = synth_dataset(1, n.max(32), seed)?;
    let mut c = ds.samples[0].cloud.clone();
    if c.len() != n {
        c = PointCloud::from_positions(&c.positions()[..n])?;
    }
    Ok(c)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let fault = match &a.inject_fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| {
            let known: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
            SpnError::Usage(format!(
                "unknown op {name}; known ops: {}",
                known.join(", ")
            ))
        })?),
        None => None,
    };
    let cases = gradcheck_suite(fault)?;
    let width = cases.iter().map(|c| c.case.len()).max().unwrap_or(4);
    for c in &cases {
        println!(
            "{}  {:<width$}  rel {:.3e}  ({} coords)",
            if c.passed { "PASS" } else { "FAIL" },
            c.case,
            c.max_rel_error,
            c.checked
        );
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("gradcheck.json"), to_json(&cases))?;
    }
    let failed: Vec<String> = cases
        .iter()
        .filter(|c| !c.passed)
        .map(|c| {
            format!(
                "{} (op {}, {} index {}: analytic {:.6e} vs numeric {:.6e})",
                c.case, c.op, c.input, c.worst_index, c.analytic, c.numeric
            )
        })
        .collect();
    if failed.is_empty() {
        println!("all {} cases passed", cases.len());
        Ok(())
    } else {
        Err(SpnError::Verification(format!(
            "{} of {} cases failed: {}",
            failed.len(),
            cases.len(),
            failed.join("; ")
        )))
    }
}

pub fn cmd_bench_knn(a: &BenchKnnArgs) -> Result<()> {
    let mut csv = String::from("n,k,brute_ms,kdtree_ms,speedup\n");
    println!(
        "{:>8}  {:>4}  {:>12}  {:>12}  {:>8}",
        "n", "k", "brute_ms", "kdtree_ms", "speedup"
    );
    for (i, &n) in a.sizes.iter().enumerate() {
        let mut rng = substream(a.seed, Stream::Synth, i as u64);
        let pts: Vec<Point3> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let centers: Vec<usize> = (0..n).collect();
        let t0 = Instant::now();
        let brute = knn_query(&pts, &centers, a.k, KnnBackend::BruteForce)?;
        let brute_ms = t0.elapsed().as_secs_f64() * 1e3;
        let t1 = Instant::now();
        let tree = knn_query(&pts, &centers, a.k, KnnBackend::KdTree)?;
        let tree_ms = t1.elapsed().as_secs_f64() * 1e3;
        if let Some(r) = (0..n).find(|&r| brute.row(r) != tree.row(r)) {
            return Err(SpnError::Verification(format!(
                "k-d tree disagrees with brute force at n={n}, row {r}: {:?} vs {:?}",
                tree.row(r),
                brute.row(r)
            )));
        }
        let speedup = brute_ms / tree_ms;
        println!(
            "{n:>8}  {:>4}  {brute_ms:>12.2}  {tree_ms:>12.2}  {speedup:>8.2}",
            a.k
        );
        csv.push_str(&format!(
            "{n},{},{brute_ms:.3},{tree_ms:.3},{speedup:.3}\n",
            a.k
        ));
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("bench_knn.csv"), csv)?;
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let ds = synth_dataset(a.per_class, a.points, a.seed)?;
    create_dir(&a.out)?;
    for (i, s) in ds.samples.iter().enumerate() {
        write_binary(&a.out.join(format!("cloud_{i:05}.spnc")), &s.cloud)?;
    }
    write_file(&a.out.join("part_sets.json"), to_json(&ds.part_sets))?;
    println!("wrote {} clouds to {}", ds.len(), a.out.display());
    Ok(())
}
