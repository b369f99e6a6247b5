use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn trman(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trman")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["generate", "--out", path_str(dir)];
    args.extend_from_slice(extra);
    trman(&args)
}

fn data_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn generate_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let flags = ["--dims", "8,9,10", "--rank", "2,3,2", "--samples", "200", "--holdout", "50"];
    assert!(generate(&a, &[&flags[..], &["--seed", "7"]].concat()).status.success());
    assert!(generate(&b, &[&flags[..], &["--seed", "7"]].concat()).status.success());
    assert!(generate(&c, &[&flags[..], &["--seed", "8"]].concat()).status.success());
    for name in ["truth.txt", "samples.txt", "holdout.txt", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_ne!(fs::read(a.join("samples.txt")).unwrap(), fs::read(c.join("samples.txt")).unwrap());
}

#[test]
fn generate_rate_gives_exact_count() {
    let tmp = TempDir::new().unwrap();
    let out = generate(tmp.path(), &["--dims", "100,100,100", "--rank", "2,2,2", "--rate", "0.01", "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(data_lines(&tmp.path().join("samples.txt")), 10000);
    assert_eq!(data_lines(&tmp.path().join("holdout.txt")), 1000);
    let header = fs::read_to_string(tmp.path().join("samples.txt")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "3 100 100 100 10000");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["samples"], 10000);
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["rank"], serde_json::json!([2, 2, 2]));
}

#[test]
fn generate_utr_writes_one_core() {
    let tmp = TempDir::new().unwrap();
    let out = generate(tmp.path(), &["--mode", "utr", "--dims", "6,6,6,6", "--rank", "2,2,2,2", "--samples", "100"]);
    assert!(out.status.success());
    let truth = fs::read_to_string(tmp.path().join("truth.txt")).unwrap();
    let lines: Vec<&str> = truth.lines().collect();
    assert_eq!(lines[0], "1");
    assert_eq!(lines[1], "2 6 2");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2].split_whitespace().count(), 24);
}

#[test]
fn generate_rejects_bad_arguments() {
    let tmp = TempDir::new().unwrap();
    let too_many = generate(tmp.path(), &["--dims", "3,3,3", "--rank", "1,1,1", "--samples", "28"]);
    assert_eq!(too_many.status.code(), Some(2));
    let both = generate(tmp.path(), &["--dims", "3,3,3", "--rank", "1,1,1", "--samples", "5", "--rate", "0.1"]);
    assert_eq!(both.status.code(), Some(2));
    let neither = generate(tmp.path(), &["--dims", "3,3,3", "--rank", "1,1,1"]);
    assert_eq!(neither.status.code(), Some(2));
    let uneven = generate(tmp.path(), &["--mode", "utr", "--dims", "3,4,3", "--rank", "1,1,1", "--samples", "5"]);
    assert_eq!(uneven.status.code(), Some(2));
    let mismatch = generate(tmp.path(), &["--dims", "3,3,3", "--rank", "1,1", "--samples", "5"]);
    assert_eq!(mismatch.status.code(), Some(2));
}

fn complete(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.join("run");
    let samples = dir.join("samples.txt");
    let mut args = vec!["complete", "--sample-file", path_str(&samples), "--out", path_str(&out)];
    args.extend_from_slice(extra);
    trman(&args)
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run/summary.json")).unwrap()).unwrap()
}

#[test]
fn complete_from_truth_is_a_single_row() {
    let tmp = TempDir::new().unwrap();
    assert!(generate(tmp.path(), &["--dims", "10,10,10", "--rank", "2,2,2", "--rate", "0.3"]).status.success());
    let truth = tmp.path().join("truth.txt");
    let out = complete(tmp.path(), &["--truth-file", path_str(&truth), "--init", "truth"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(tmp.path().join("run/trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "iter,objective,grad_norm,stepsize,backtracks,train_rel_err,holdout_rel_err,wall_time_s");
    assert_eq!(lines.len(), 2);
    let s = summary(tmp.path());
    assert_eq!(s["success"], true);
    assert_eq!(s["iterations"], 0);
    assert_eq!(s["solver"]["success_tol"], 1e-4);
    assert_eq!(fs::read(&truth).unwrap(), fs::read(tmp.path().join("run/cores.txt")).unwrap());
}

#[test]
fn complete_recovers_small_instance_deterministically() {
    let tmp = TempDir::new().unwrap();
    let gen = generate(tmp.path(), &["--dims", "12,12,12", "--rank", "2,2,2", "--rate", "0.4", "--seed", "3"]);
    assert!(gen.status.success());
    let truth = tmp.path().join("truth.txt");
    let holdout = tmp.path().join("holdout.txt");
    let flags = [
        "--truth-file",
        path_str(&truth),
        "--holdout-file",
        path_str(&holdout),
        "--rank",
        "2,2,2",
        "--seed",
        "5",
        "--deterministic",
    ];
    let out = complete(tmp.path(), &flags);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read(tmp.path().join("run/trace.csv")).unwrap();
    let s = summary(tmp.path());
    assert_eq!(s["success"], true, "{s}");
    assert!(s["recovery_rel_err"].as_f64().unwrap() <= 1e-6);
    assert!(s["holdout_rel_err"].as_f64().unwrap() <= 1e-6);
    assert!(complete(tmp.path(), &flags).status.success());
    assert_eq!(first, fs::read(tmp.path().join("run/trace.csv")).unwrap());
}

#[test]
fn complete_utr_runs() {
    let tmp = TempDir::new().unwrap();
    let gen = generate(tmp.path(), &["--mode", "utr", "--dims", "8,8,8", "--rank", "2,2,2", "--samples", "200"]);
    assert!(gen.status.success());
    let truth = tmp.path().join("truth.txt");
    let out = complete(tmp.path(), &["--mode", "utr", "--truth-file", path_str(&truth), "--rank", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(tmp.path())["success"], true);
    let cores = fs::read_to_string(tmp.path().join("run/cores.txt")).unwrap();
    assert_eq!(cores.lines().next(), Some("1"));
}

#[test]
fn complete_reports_parse_errors_with_line_numbers() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("samples.txt"), "3 4 4 4 2\n1 1 1 0.5\n2 x 1 0.25\n").unwrap();
    let out = complete(tmp.path(), &["--rank", "1,1,1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    fs::write(tmp.path().join("samples.txt"), "3 4 4 4 1\n1 1 5 0.5\n").unwrap();
    assert_eq!(complete(tmp.path(), &["--rank", "1,1,1"]).status.code(), Some(3));

    fs::remove_file(tmp.path().join("samples.txt")).unwrap();
    assert_eq!(complete(tmp.path(), &["--rank", "1,1,1"]).status.code(), Some(3));
}

#[test]
fn complete_argument_errors() {
    let tmp = TempDir::new().unwrap();
    assert!(generate(tmp.path(), &["--dims", "5,5,5", "--rank", "1,1,1", "--samples", "60"]).status.success());
    assert_eq!(complete(tmp.path(), &[]).status.code(), Some(2));
    assert_eq!(complete(tmp.path(), &["--rank", "1,1"]).status.code(), Some(2));
    assert_eq!(complete(tmp.path(), &["--rank", "1,1,1", "--init", "truth"]).status.code(), Some(2));
    assert_eq!(complete(tmp.path(), &["--rank", "1,1,1", "--lambda", "-1"]).status.code(), Some(2));
    assert_eq!(complete(tmp.path(), &["--rank", "1,1,1", "--beta", "hs"]).status.code(), Some(2));
}

#[test]
fn phase_writes_reproducible_grid() {
    let tmp = TempDir::new().unwrap();
    let run = |dir: &str| {
        let out = tmp.path().join(dir);
        let args = [
            "phase",
            "--rank",
            "1,1,1",
            "--n-grid",
            "4,5",
            "--omega-grid",
            "3,64",
            "--trials",
            "2",
            "--max-iters",
            "200",
            "--deterministic",
            "--out",
            path_str(&out),
        ];
        let o = trman(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out.join("phase.csv")).unwrap()
    };
    let first = run("a");
    assert_eq!(first, run("b"));
    let rows: Vec<Vec<String>> =
        first.lines().map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows[0].join(","), "n,omega,success_rate,mean_final_err,mean_iters,mean_time_s");
    assert_eq!(rows.len(), 5);
    let rate = |n: &str, omega: &str| -> f64 {
        rows.iter().find(|r| r[0] == n && r[1] == omega).unwrap()[2].parse().unwrap()
    };
    // a rank-one model has 3n - 2 free parameters
    assert_eq!(rate("4", "3"), 0.0);
    assert_eq!(rate("5", "3"), 0.0);
    assert_eq!(rate("4", "64"), 1.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["solver"]["success_tol"], 1e-4);
    assert_eq!(manifest["truth_mode"], "tr");
}

#[test]
fn phase_rejects_bad_grids() {
    let tmp = TempDir::new().unwrap();
    let out = path_str(tmp.path());
    let over = trman(&["phase", "--rank", "1,1,1", "--n-grid", "3", "--omega-grid", "30", "--out", out]);
    assert_eq!(over.status.code(), Some(2));
    let zero = trman(&["phase", "--n-grid", "3", "--omega-grid", "5", "--trials", "0", "--out", out]);
    assert_eq!(zero.status.code(), Some(2));
    let uneven = trman(&["phase", "--rank", "1,2,1", "--n-grid", "3", "--omega-grid", "5", "--out", out]);
    assert_eq!(uneven.status.code(), Some(2));
}

#[test]
fn help_lists_defaults() {
    let out = trman(&["complete", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["[default: rcg]", "[default: pr+]", "[default: 1000]", "[default: 1e-8]", "[default: 1e-4]"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
    assert_eq!(trman(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn generate_gaussian_truth_has_signed_entries() {
    let tmp = TempDir::new().unwrap();
    let out = generate(tmp.path(), &["--dims", "6,6,6", "--rank", "2,2,2", "--samples", "20", "--distribution", "gaussian"]);
    assert!(out.status.success());
    let truth = fs::read_to_string(tmp.path().join("truth.txt")).unwrap();
    assert!(truth.contains('-'));
    let manifest = fs::read_to_string(tmp.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"distribution\": \"gaussian\""));
}
