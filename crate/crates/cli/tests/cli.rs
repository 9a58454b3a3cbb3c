use std::path::Path;
use std::process::{Command, Output};

fn judgecal(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_judgecal"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        "data.n_items = 400\nsplit.n_test = 100\nsplit.n_train_pool = 300\n\
         split.nested_anchor_sizes = 50,300\nanchor_sizes = 50,300\n\
         methods = raw,constant,transport,bayes\nsampler.n_warmup = 400\n\
         sampler.n_draws = 400\nsampler.ess_min = 100\nsampler.rhat_max = 1.05\n\
         flow.epochs = 5\nsweep.grid = 50,100\nsweep.methods = transport,bayes\n{extra}"
    );
    let path = dir.join("small.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn entries(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .map(|d| {
            d.map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = judgecal(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("table1"));
}

#[test]
fn usage_errors_exit_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["table1", "--bogus"],
        vec!["table1", "--seed", "minus-one"],
        vec!["sweep", "--out", "r"],
        vec![],
    ] {
        let out = judgecal(&args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
        assert!(entries(dir.path()).is_empty(), "{args:?} wrote files");
    }
    std::fs::write(dir.path().join("bad.cfg"), "synth.no_such_key = 1\n").unwrap();
    let out = judgecal(&["table1", "--config", "bad.cfg", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("r").exists());
}

#[test]
fn runtime_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = judgecal(
        &[
            "evaluate",
            "--data",
            "missing.csv",
            "--model",
            "m.json",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("r").exists());
}

#[test]
fn table1_writes_json_and_csv_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    for out_dir in ["a", "b"] {
        let out = judgecal(
            &["table1", "--config", &cfg, "--seed", "3", "--out", out_dir],
            dir.path(),
        );
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert_eq!(
        entries(&dir.path().join("a")),
        ["table1.csv", "table1.json"]
    );
    for f in ["table1.json", "table1.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/table1.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 3);
    assert_eq!(json["config_digest"].as_str().unwrap().len(), 64);
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    for key in [
        "method",
        "anchors",
        "mean_error",
        "mae",
        "pearson",
        "spearman",
        "kl_sym",
    ] {
        assert!(rows[0].get(key).is_some(), "row lacks {key}");
    }
    let other = judgecal(
        &["table1", "--config", &cfg, "--seed", "4", "--out", "c"],
        dir.path(),
    );
    assert_eq!(other.status.code(), Some(0));
    assert_ne!(
        std::fs::read(dir.path().join("a/table1.json")).unwrap(),
        std::fs::read(dir.path().join("c/table1.json")).unwrap()
    );
}

#[test]
fn sweep_emits_plot_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = judgecal(&["sweep", "--config", &cfg, "--out", "s"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "anchor_size,method,mean_error,mae,pearson,kl_sym");
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1].starts_with("50,transport,"));
}

#[test]
fn multiseed_reports_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = judgecal(
        &[
            "multiseed",
            "--config",
            &cfg,
            "--n-seeds",
            "3",
            "--out",
            "m",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("m/multiseed.json")).unwrap())
            .unwrap();
    let cell = &json["cells"][0];
    assert_eq!(cell["method"], "raw");
    assert_eq!(cell["mae"]["n_ok"], 3);
    assert!(cell["mae"]["sd"].as_f64().unwrap() > 0.0);
}

#[test]
fn synth_fit_and_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let run = |args: &[&str]| {
        let out = judgecal(args, dir.path());
        assert_eq!(
            out.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["synth", "--config", &cfg, "--out", "d"]);
    let synth = std::fs::read_to_string(dir.path().join("d/synth.csv")).unwrap();
    assert_eq!(synth.lines().count(), 401);

    run(&[
        "fit-bayes",
        "--config",
        &cfg,
        "--anchors",
        "50",
        "--out",
        "b",
    ]);
    let fit: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("b/bayes_fit.json")).unwrap())
            .unwrap();
    assert_eq!(fit["anchors"], 50);
    assert!(fit["canary"]["alert"].is_boolean());
    run(&[
        "evaluate",
        "--data",
        "d/synth.csv",
        "--model",
        "b/bayes_trace.json",
        "--out",
        "e",
    ]);
    let eval: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("e/evaluation.json")).unwrap())
            .unwrap();
    assert_eq!(eval["model"], "bayes");
    assert!(eval["metrics"]["mean_error"].as_f64().unwrap().abs() < 0.2);
    let corrected = std::fs::read_to_string(dir.path().join("e/corrected.csv")).unwrap();
    assert!(corrected.starts_with("item_id,judge,reference,corrected,lo,hi,sigma\n"));
    assert_eq!(corrected.lines().count(), 401);

    run(&[
        "fit-flow",
        "--config",
        &cfg,
        "--data",
        "d/synth.csv",
        "--out",
        "f",
    ]);
    run(&[
        "evaluate",
        "--data",
        "d/synth.csv",
        "--model",
        "f/flow_weights.json",
        "--mc-passes",
        "5",
        "--out",
        "g",
    ]);
    let eval: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("g/evaluation.json")).unwrap())
            .unwrap();
    assert_eq!(eval["model"], "flow");
    let corrected = std::fs::read_to_string(dir.path().join("g/corrected.csv")).unwrap();
    let first = corrected.lines().nth(1).unwrap();
    assert!(first.split(',').nth(6).unwrap().parse::<f64>().unwrap() > 0.0);
}
