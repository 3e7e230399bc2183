use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--n-positive",
    "150",
    "--n-negative",
    "300",
    "--epochs",
    "4",
    "--hidden",
    "8,4",
    "--n-boot",
    "100",
];

fn soundex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soundex"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = soundex(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn ok_owned(args: &[String]) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs)
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn assert_same_dirs(a: &Path, b: &Path) {
    assert_eq!(files(a), files(b));
    for f in files(a) {
        let x = std::fs::read(a.join(&f)).unwrap();
        let y = std::fs::read(b.join(&f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn axioms_prints_the_impossibility_instance() {
    let out = ok(&["axioms"]);
    assert!(out.contains("attribution (2, -1)"), "{out}");
    assert!(out.contains("attribution (0, 1)"), "{out}");
    assert!(out.contains("baseline invariance violated"), "{out}");
    assert!(out.lines().any(|l| l.starts_with("verdict:")), "{out}");
    let json: serde_json::Value = serde_json::from_str(&ok(&["axioms", "--json"])).unwrap();
    assert_eq!(
        json["theorem1"]["attribution1"]["scores"],
        serde_json::json!([2.0, -1.0])
    );
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = soundex(&["gen", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(out.stdout.is_empty());
}

#[test]
fn generation_and_training_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cases: [&[&str]; 5] = [
        &["gen", "--out", d],
        &["train", "--data", "x", "--out", d],
        &["select", "--data", "x", "--out", d],
        &["retrain", "--data", "x", "--selected", "y", "--out", d],
        &["experiment", "--out", d],
    ];
    for args in cases {
        let cmd = args[0];
        let out = soundex(args);
        assert_eq!(out.status.code(), Some(1), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"), "{cmd}");
    }
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = soundex(&[
        "train",
        "--seed",
        "1",
        "--data",
        "/definitely/not/here.triplets",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = soundex(&[
        "experiment",
        "--seed",
        "1",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        "o",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn print_config_applies_overrides() {
    let out = ok(&["experiment", "--print-config", "--epochs", "3", "--stop-delta", "0.01"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["train"]["epochs"], 3);
    assert_eq!(v["stop_delta"], 0.01);
    assert_eq!(v["cohort"]["target_sparsity"], 0.94);
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok_owned(&with(
            &["gen", "--seed", "7", "--out", d.path().to_str().unwrap()],
            SMALL,
        ));
    }
    assert_same_dirs(a.path(), b.path());
    assert!(files(a.path()).contains(&"manifest.json".to_string()));
}

#[test]
fn staged_workflow_writes_manifests() {
    let root = tempfile::tempdir().unwrap();
    let p = |s: &str| root.path().join(s).to_str().unwrap().to_string();
    ok_owned(&with(&["gen", "--seed", "3", "--out", &p("g")], SMALL));
    let train = p("g/train.triplets");
    let test = p("g/test.triplets");
    ok_owned(&with(
        &[
            "select",
            "--seed",
            "3",
            "--data",
            &train,
            "--test",
            &test,
            "--out",
            &p("s"),
        ],
        SMALL,
    ));
    let reduce = ok(&[
        "reduce",
        "--data",
        &train,
        "--model",
        &p("s/model_binmask.json"),
        "--selected",
        &p("s/selected.csv"),
        "--out",
        &p("r"),
    ]);
    let v: serde_json::Value = serde_json::from_str(&reduce).unwrap();
    assert!(v["final_auc"].as_f64().unwrap() >= v["baseline_auc"].as_f64().unwrap() - 0.006);
    ok_owned(&with(
        &[
            "retrain",
            "--seed",
            "3",
            "--data",
            &train,
            "--selected",
            &p("r/reduced.csv"),
            "--test",
            &test,
            "--out",
            &p("f"),
        ],
        SMALL,
    ));
    let csv = ok(&[
        "report",
        "--data",
        &test,
        "--model",
        &p("f/model_final.json"),
        "--selected",
        &p("r/reduced.csv"),
        "--svg",
        "--out",
        &p("rep"),
    ]);
    assert!(csv.starts_with("feature,univariate_auc,stage_selected\n"));
    for d in ["g", "s", "r", "f", "rep"] {
        assert!(root.path().join(d).join("manifest.json").exists(), "{d}");
    }
    assert!(root.path().join("rep/ranking.svg").exists());

    // The final model as a graph: explanation replays bit-exactly.
    let graph = p("graph/final.json");
    ok(&["explain", "--model", &p("f/model_final.json"), "--write-graph", &graph]);
    let n = std::fs::read_to_string(p("r/reduced.csv")).unwrap().lines().count() - 1;
    let input = vec!["0.5"; n].join(",");
    let v: serde_json::Value = serde_json::from_str(&ok(&["explain", "--graph", &graph, "--input", &input])).unwrap();
    assert_eq!(v["bit_exact"], true);
}

#[test]
fn experiment_rerun_is_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("small.json");
    let mut c: serde_json::Value = serde_json::from_str(&ok(&["experiment", "--print-config"])).unwrap();
    c["cohort"]["n_positive"] = 150.into();
    c["cohort"]["n_negative"] = 300.into();
    c["train"]["epochs"] = 4.into();
    c["hidden"] = serde_json::json!([8, 4]);
    c["n_boot"] = 100.into();
    std::fs::write(&cfg, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let mut stdout = Vec::new();
    for d in [&a, &b] {
        stdout.push(ok(&[
            "experiment",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            d.to_str().unwrap(),
        ]));
    }
    assert_eq!(stdout[0], stdout[1]);
    assert_same_dirs(&a, &b);
    for f in [
        "manifest.json",
        "report.json",
        "stage_full.csv",
        "stage_binmask.csv",
        "stage_reduced.csv",
        "stage_final.csv",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["master"], 7);
    assert_eq!(m["subcommand"], "experiment");
}

#[test]
fn thread_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok_owned(&with(
        &[
            "--threads",
            "1",
            "gen",
            "--seed",
            "5",
            "--out",
            a.path().to_str().unwrap(),
        ],
        SMALL,
    ));
    ok_owned(&with(
        &[
            "--threads",
            "3",
            "gen",
            "--seed",
            "5",
            "--out",
            b.path().to_str().unwrap(),
        ],
        SMALL,
    ));
    assert_same_dirs(a.path(), b.path());
}

#[test]
fn desk_experiment_rerun_is_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for d in [&a, &b] {
        ok(&["experiment", "--seed", "7", "--out", d.to_str().unwrap()]);
    }
    assert_same_dirs(&a, &b);
    assert!(a.join("manifest.json").exists());
}
