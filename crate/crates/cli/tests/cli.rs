use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use mctd_core::data::{load_csv, CsvSchema};
use serde_json::Value;

const TINY: &str = r#"
[data]
val_fraction = 0.2
test_fraction = 0.25

[data.synthetic]
kind = "mean_signal"
n = 160
steps = 6
features = 2
seed = 3

[model]
hidden_size = 4
dense_units = 4

[train]
method = "td:0.3"
epochs = 3
patience = 1
batch_size = 32
learning_rate = 0.005

[eval]
num_samples = 3
"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let sb = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(sb.path("tiny.toml"), TINY).unwrap();
        sb
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_mctd"))
            .args(args)
            .current_dir(self.dir.path())
            .env("MCTD_OUTPUT_ROOT", self.path("root"))
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> PathBuf {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
    }

    fn fails(&self, args: &[&str], code: i32) -> String {
        let out = self.run(args);
        let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
        assert_eq!(out.status.code(), Some(code), "{args:?}: {stderr}");
        stderr
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn help_lists_flags_and_unknown_flags_are_rejected() {
    let sb = Sandbox::new();
    for (cmd, flag) in [
        ("gen", "--heteroscedastic"),
        ("train", "--method"),
        ("eval", "--missing"),
        ("sweep", "--ratios"),
        ("kfold", "--k"),
    ] {
        let out = sb.run(&[cmd, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        assert!(text.contains("--out"), "{cmd} --help lacks --out");
        sb.fails(&[cmd, "--no-such-flag"], 2);
    }
}

#[test]
fn gen_is_deterministic_and_loadable() {
    let sb = Sandbox::new();
    let args = |out: &str| {
        ["gen", "--kind", "mean_signal", "--n", "50", "--t", "8", "--f", "3", "--seed", "7", "--out"]
            .into_iter()
            .map(String::from)
            .chain([out.to_string()])
            .collect::<Vec<_>>()
    };
    let a = sb.ok(&args("a").iter().map(String::as_str).collect::<Vec<_>>());
    let b = sb.ok(&args("b").iter().map(String::as_str).collect::<Vec<_>>());
    let a = sb.dir.path().join(a);
    let b = sb.dir.path().join(b);
    for f in ["data.csv", "truth.csv", "spec.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let batch = load_csv(a.join("data.csv"), &CsvSchema::default()).unwrap();
    assert_eq!((batch.len(), batch.steps(), batch.features()), (50, 8, 3));
    assert_eq!(csv_rows(&a.join("truth.csv")).len(), 51);
}

#[test]
fn train_writes_a_reproducible_run() {
    let sb = Sandbox::new();
    let start = Instant::now();
    let a = sb.ok(&["train", "-c", "tiny.toml", "--out", "a"]);
    assert!(start.elapsed().as_secs() < 60);
    let a = sb.dir.path().join(a);
    for f in [
        "config.toml",
        "checkpoint.json",
        "run_record.json",
        "metrics.json",
        "reliability.csv",
        "uncertainty.csv",
        "test.csv",
    ] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let record = json(&a.join("run_record.json"));
    assert!(record["wall_clock_secs"].as_f64().unwrap() >= 0.0);
    assert_eq!(record["settings"]["train"]["method"], "td:0.3");
    assert_eq!(csv_rows(&a.join("reliability.csv")).len(), 10);
    assert_eq!(csv_rows(&a.join("uncertainty.csv"))[0], ["series_id", "target", "mu_eu", "var_eu", "au", "pu"]);

    let b = sb.dir.path().join(sb.ok(&["train", "-c", "tiny.toml", "--out", "b"]));
    let c = sb.dir.path().join(sb.ok(&["train", "-c", "tiny.toml", "--seed", "1", "--out", "c"]));
    let metrics = |d: &Path| fs::read_to_string(d.join("metrics.json")).unwrap();
    assert_eq!(metrics(&a), metrics(&b));
    assert_ne!(metrics(&a), metrics(&c));
    assert_eq!(
        fs::read(a.join("checkpoint.json")).unwrap(),
        fs::read(b.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn echoed_config_reruns_identically() {
    let sb = Sandbox::new();
    let a = sb.dir.path().join(sb.ok(&["train", "-c", "tiny.toml", "--epochs", "2", "--out", "a"]));
    let echoed = a.join("config.toml");
    let b = sb
        .dir
        .path()
        .join(sb.ok(&["train", "-c", echoed.to_str().unwrap(), "--out", "b"]));
    assert_eq!(
        fs::read_to_string(echoed).unwrap(),
        fs::read_to_string(b.join("config.toml")).unwrap()
    );
    assert_eq!(json(&a.join("metrics.json")), json(&b.join("metrics.json")));
}

#[test]
fn auto_named_run_directories_live_under_the_output_root() {
    let sb = Sandbox::new();
    let dir = sb.ok(&["train", "-c", "tiny.toml", "--epochs", "2"]);
    assert!(dir.starts_with(sb.path("root")), "{}", dir.display());
    let name = dir.file_name().unwrap().to_str().unwrap();
    let parts: Vec<&str> = name.splitn(3, '-').collect();
    assert_eq!(parts[0], "train");
    assert_eq!(parts[1].len(), 12);
    let mut top: Vec<String> = fs::read_dir(sb.dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    top.sort();
    assert_eq!(top, ["root", "tiny.toml"]);
}

#[test]
fn config_errors_exit_with_2() {
    let sb = Sandbox::new();
    fs::write(sb.path("bad.toml"), TINY.replace("td:0.3", "bogus")).unwrap();
    let err = sb.fails(&["train", "-c", "bad.toml"], 2);
    assert!(err.contains("method"), "{err}");
    let err = sb.fails(&["train", "-c", "tiny.toml", "--method", "bogus"], 2);
    assert!(err.contains("method"), "{err}");
    sb.fails(&["train", "-c", "tiny.toml", "--patience", "5"], 2);
    sb.fails(&["train", "-c", "missing.toml"], 2);
}

#[test]
fn data_and_numeric_failures_have_their_own_codes() {
    let sb = Sandbox::new();
    sb.fails(&["train", "-c", "tiny.toml", "--data", "nope.csv"], 3);
    let err = sb.fails(&["train", "-c", "tiny.toml", "--learning-rate", "1e300"], 4);
    assert!(err.contains("diverged") || err.contains("non-finite"), "{err}");
}

#[test]
fn eval_reproduces_the_training_scores() {
    let sb = Sandbox::new();
    let run = sb.dir.path().join(sb.ok(&["train", "-c", "tiny.toml", "--out", "run"]));
    let ckpt = run.join("checkpoint.json");
    let test = run.join("test.csv");
    let args = |extra: &[&str], out: &str| {
        let mut v = vec!["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", test.to_str().unwrap()];
        v.extend_from_slice(extra);
        v.extend_from_slice(&["--out", out]);
        v.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let call = |a: Vec<String>| sb.ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let e = sb.dir.path().join(call(args(&["--samples", "3"], "e")));
    assert_eq!(json(&e.join("metrics.json")), json(&run.join("metrics.json")));
    assert_eq!(
        fs::read(e.join("uncertainty.csv")).unwrap(),
        fs::read(run.join("uncertainty.csv")).unwrap()
    );

    call(args(&["--samples", "2"], "two"));
    call(args(&["--samples", "20", "--interval", "mixture"], "twenty"));
    let missing = sb.dir.path().join(call(args(&["--missing", "random:0.3"], "missing")));
    assert!(missing.join("summary.json").is_file());
    let bad = args(&["--samples", "1"], "one");
    let err = sb.fails(&bad.iter().map(String::as_str).collect::<Vec<_>>(), 2);
    assert!(err.contains("num_samples"), "{err}");
}

#[test]
fn eval_of_a_deterministic_model_has_no_epistemic_variance() {
    let sb = Sandbox::new();
    let run = sb
        .dir
        .path()
        .join(sb.ok(&["train", "-c", "tiny.toml", "--method", "none", "--out", "run"]));
    let e = sb.dir.path().join(sb.ok(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.json").to_str().unwrap(),
        "--data",
        run.join("test.csv").to_str().unwrap(),
        "--out",
        "e",
    ]));
    let rows = csv_rows(&e.join("uncertainty.csv"));
    let col = rows[0].iter().position(|h| h == "var_eu").unwrap();
    assert!(rows[1..].iter().all(|r| r[col].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn eval_names_feature_count_mismatches() {
    let sb = Sandbox::new();
    let run = sb.dir.path().join(sb.ok(&["train", "-c", "tiny.toml", "--out", "run"]));
    let data = sb.dir.path().join(sb.ok(&["gen", "--n", "20", "--t", "6", "--f", "3", "--out", "g"]));
    let err = sb.fails(
        &[
            "eval",
            "--checkpoint",
            run.join("checkpoint.json").to_str().unwrap(),
            "--data",
            data.join("data.csv").to_str().unwrap(),
            "--out",
            "e",
        ],
        3,
    );
    assert!(err.contains("expects 2") && err.contains("has 3"), "{err}");
}

#[test]
fn single_ratio_sweep_matches_train() {
    let sb = Sandbox::new();
    let s = sb
        .dir
        .path()
        .join(sb.ok(&["sweep", "-c", "tiny.toml", "--ratios", "0.4", "--out", "s"]));
    let t = sb
        .dir
        .path()
        .join(sb.ok(&["train", "-c", "tiny.toml", "--method", "td:0.4", "--out", "t"]));
    let rows = csv_rows(&s.join("sweep.csv"));
    assert_eq!(rows[0], ["ratio", "r2", "rmse", "mae", "ece", "mean_pu", "norm_pu"]);
    assert_eq!(rows.len(), 2);
    let sweep = json(&s.join("sweep.json"));
    assert_eq!(sweep[0]["metrics"], json(&t.join("metrics.json")));
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), sweep[0]["r2"].as_f64().unwrap());
}

#[test]
fn kfold_emits_one_row_per_fold_and_a_mean() {
    let sb = Sandbox::new();
    let k = sb.dir.path().join(sb.ok(&[
        "kfold",
        "-c",
        "tiny.toml",
        "--method",
        "ctd:0.1:0.1",
        "--k",
        "2",
        "--out",
        "k",
    ]));
    let rows = csv_rows(&k.join("kfold.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].last().unwrap(), "learned_alpha");
    assert_eq!(rows[1][0], "0");
    assert_eq!(rows[2][0], "1");
    assert_eq!(rows[3][0], "mean");
    for row in &rows[1..] {
        let a: f64 = row.last().unwrap().parse().unwrap();
        assert!(a > 0.0 && a < 1.0);
    }
    let summary = json(&k.join("kfold.json"));
    let r2: Vec<f64> = summary["folds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["metrics"]["r2"].as_f64().unwrap())
        .collect();
    let mean = summary["mean"]["r2"].as_f64().unwrap();
    assert!((mean - (r2[0] + r2[1]) / 2.0).abs() < 1e-12);
    sb.fails(&["kfold", "-c", "tiny.toml", "--k", "1", "--out", "k1"], 2);
}
