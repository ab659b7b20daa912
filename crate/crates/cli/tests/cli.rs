use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spn"))
        .args(args)
        .output()
        .expect("spawn spn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_TRAIN: &[&str] = &[
    "--synth",
    "--per-class",
    "6",
    "--points",
    "64",
    "--epochs",
    "2",
    "--batch",
    "8",
];

fn train_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend_from_slice(SMALL_TRAIN);
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", dir.to_str().unwrap()]);
    spn(&args)
}

#[test]
fn help_lists_stable_flags() {
    let expect: &[(&str, &[&str])] = &[
        (
            "train",
            &[
                "--seed",
                "--epochs",
                "--batch",
                "--groups",
                "--k",
                "--points",
                "--edge-variant",
                "--neighbor",
                "--radius",
                "--synth",
                "--data",
                "--out",
                "--threads",
            ],
        ),
        (
            "complexity",
            &["--groups", "--sweep-groups", "--k", "--points", "--out"],
        ),
        ("eval", &["--model", "--data", "--synth", "--seed"]),
        ("bench-knn", &["--k", "--seed", "--out"]),
        ("gradcheck", &["--out", "--threads"]),
        ("synth", &["--seed", "--points", "--out"]),
        ("segment", &["--model", "--data", "--out"]),
    ];
    for (cmd, flags) in expect {
        let o = spn(&[cmd, "--help"]);
        assert!(o.status.success());
        let h = stdout(&o);
        for f in *flags {
            assert!(h.contains(f), "{cmd} --help lacks {f}");
        }
    }
    assert!(!stdout(&spn(&["gradcheck", "--help"])).contains("inject-fault"));
}

#[test]
fn exit_codes() {
    assert_eq!(spn(&["train", "--bogus"]).status.code(), Some(1));
    let o = spn(&["train", "--data", "/no/such/dataset"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/dataset"));
    let o = spn(&["complexity", "--groups", "4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stage1 layer 1"), "{}", stderr(&o));
}

#[test]
fn training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = train_into(d, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ca = fs::read(a.join("model.spnm")).unwrap();
    assert_eq!(ca, fs::read(b.join("model.spnm")).unwrap());
    assert_eq!(&ca[..4], b"SPNM");
    let log = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "epoch",
            "lr",
            "bn_momentum",
            "train_loss",
            "train_acc",
            "eval_acc",
            "wall_ms",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    let o = spn(&[
        "eval",
        "--model",
        a.join("model.spnm").to_str().unwrap(),
        "--synth",
        "--per-class",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let oa = m["overall_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&oa));
}

#[test]
fn synth_files_train_and_segment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = spn(&[
        "synth",
        "--per-class",
        "4",
        "--points",
        "64",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(data.join("part_sets.json").exists());
    let run = tmp.path().join("run");
    let o = spn(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "segment",
        "--epochs",
        "1",
        "--batch",
        "8",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["miou"].as_f64().is_some());

    let pred = tmp.path().join("pred.txt");
    let o = spn(&[
        "segment",
        "--model",
        run.join("model.spnm").to_str().unwrap(),
        "--data",
        data.join("cloud_00000.spnc").to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&pred).unwrap();
    assert_eq!(text.lines().count(), 64);
    assert!(text.lines().all(|l| l.split_whitespace().count() == 4));
}

#[test]
fn complexity_sweep_shrinks_and_formats_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let o = spn(&[
        "complexity",
        "--sweep-groups",
        "1,2,4,8",
        "--shared-input",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("complexity.json")).unwrap())
            .unwrap();
    let rows = v["sweep"].as_array().unwrap();
    let flops: Vec<u64> = rows
        .iter()
        .map(|r| r["grouped_flops"].as_u64().unwrap())
        .collect();
    assert!(flops.windows(2).all(|w| w[1] < w[0]), "{flops:?}");
    let table = fs::read_to_string(tmp.path().join("complexity.txt")).unwrap();
    for (r, line) in rows.iter().zip(table.lines().skip(1)) {
        let cols: Vec<u64> = line
            .split_whitespace()
            .map(|c| c.parse().unwrap())
            .collect();
        assert_eq!(
            cols,
            [
                r["groups"].as_u64().unwrap(),
                r["params"].as_u64().unwrap(),
                r["flops"].as_u64().unwrap(),
                r["grouped_flops"].as_u64().unwrap()
            ]
        );
    }

    let single = tempfile::tempdir().unwrap();
    let o = spn(&["complexity", "--out", single.path().to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(single.path().join("complexity.json")).unwrap())
            .unwrap();
    let table = fs::read_to_string(single.path().join("complexity.txt")).unwrap();
    let total = table.lines().find(|l| l.starts_with("total")).unwrap();
    let nums: Vec<u64> = total
        .split_whitespace()
        .skip(1)
        .map(|c| c.parse().unwrap())
        .collect();
    assert_eq!(nums[2], v["params"].as_u64().unwrap());
    assert_eq!(nums[3], v["flops"].as_u64().unwrap());
}

#[test]
fn gradcheck_passes_and_reports_injected_fault() {
    let o = spn(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = spn(&["gradcheck", "--inject-fault", "channel_shuffle"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("op channel_shuffle"), "{}", stderr(&o));
    assert_eq!(
        spn(&["gradcheck", "--inject-fault", "nope"]).status.code(),
        Some(1)
    );
}

#[test]
fn bench_knn_has_one_row_per_size() {
    let o = spn(&["bench-knn", "--sizes", "200,500", "--k", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].trim_start().starts_with("200"));
}
