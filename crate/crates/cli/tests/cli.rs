use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coarseconv"));
    for (k, _) in std::env::vars() {
        if k.starts_with("COARSECONV_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn simulated(dir: &Path, n: usize, k: u32) -> PathBuf {
    let path = dir.join("cohort.csv");
    let out = run(&[
        "simulate",
        "--out",
        path.to_str().unwrap(),
        "--n",
        &n.to_string(),
        "--k",
        &k.to_string(),
        "--seed",
        "11",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn analyze(input: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["analyze", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--k", "6"];
    args.extend_from_slice(extra);
    run(&args)
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn benchmark_grid_gives_one_contour_row_with_interval() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path(), 150, 6);
    let out = dir.path().join("out");
    let res = analyze(&input, &out, &["--alpha0", "0", "--alpha1", "0", "--bootstrap", "20", "--seed", "3"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let contour = lines(&out.join("contour.csv"));
    assert_eq!(contour.len(), 2);
    assert_eq!(contour[0], "alpha0,alpha1,beta_hat,or_hat,ci_low,ci_high,reject_null,error");
    let fields: Vec<&str> = contour[1].split(',').collect();
    assert_eq!(&fields[..2], ["0", "0"]);
    let or: f64 = fields[3].parse().unwrap();
    let (lo, hi): (f64, f64) = (fields[4].parse().unwrap(), fields[5].parse().unwrap());
    assert!(lo <= hi && or > 0.0);
    assert_eq!(fields[7], "");
}

#[test]
fn three_by_three_grid_and_monotone_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path(), 150, 6);
    let out = dir.path().join("out");
    let res = analyze(&input, &out, &["--alpha0=-4,0,4", "--alpha1=-4,0,4"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(lines(&out.join("contour.csv")).len(), 10);

    // Larger alpha moves mass later, so the signed CDF gap falls as alpha rises.
    let rows = lines(&out.join("kolmogorov.csv"));
    assert_eq!(rows.len(), 7);
    for arm in ["0", "1"] {
        let d: Vec<f64> = rows[1..]
            .iter()
            .filter(|r| r.starts_with(&format!("{arm},")))
            .map(|r| r.split(',').nth(3).unwrap().parse().unwrap())
            .collect();
        assert_eq!(d.len(), 3);
        assert!(d[0] >= d[1] && d[1] >= d[2], "{d:?}");
        assert_eq!(d[1], 0.0);
    }

    let dist = lines(&out.join("distributions.csv"));
    assert_eq!(dist.len(), 1 + 2 * 3 * 7);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 20150701);
    assert!(manifest["warnings"].is_array());
}

#[test]
fn malformed_csv_exits_two_and_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "patient_id,arm,cavitation,week,culture,smear\np1,0,1,1,neg,pos\np1,0,1,2,yes,pos\n").unwrap();
    let out = dir.path().join("out");
    let res = run(&["analyze", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--k", "2"]);
    assert_eq!(res.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "parse");
    assert_eq!(err["error"]["row"], 3);
    assert!(!out.exists());
}

#[test]
fn failed_analysis_removes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path(), 30, 6);
    let out = dir.path().join("out");
    // A directory in place of one output file makes the write fail midway.
    fs::create_dir_all(out.join("contour.csv")).unwrap();
    let res = analyze(&input, &out, &["--alpha0", "0", "--alpha1", "0"]);
    assert_eq!(res.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "error");
    for name in ["coefficients.csv", "distributions.csv", "kolmogorov.csv", "manifest.json"] {
        assert!(!out.join(name).exists(), "{name} left behind");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path(), 100, 6);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let extra = ["--alpha0=-2,0", "--alpha1=0,2", "--bootstrap", "15", "--dump-replicates"];
    assert!(analyze(&input, &a, &extra).status.success());
    assert!(analyze(&input, &b, &extra).status.success());
    for name in ["coefficients.csv", "distributions.csv", "kolmogorov.csv", "contour.csv", "replicates.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn environment_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path(), 100, 6);
    let out = dir.path().join("out");
    let res = bin()
        .args(["analyze", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("COARSECONV_K", "6")
        .env("COARSECONV_ALPHA0", "1")
        .env("COARSECONV_ALPHA1", "-1,1")
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let contour = lines(&out.join("contour.csv"));
    assert_eq!(contour.len(), 3);
    assert!(contour[1].starts_with("1,-1,"));
}

#[test]
fn coarsen_emits_one_row_per_patient() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path(), 20, 6);
    let res = run(&["coarsen", "--input", input.to_str().unwrap(), "--k", "6"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert_eq!(text.lines().count(), 41);
    assert!(text.starts_with("patient_id,arm,cavitation,cultures,status,coarsening_set,lower,upper\n"));
}

#[test]
fn simulate_round_trips_through_the_parser() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path(), 25, 4);
    let text = fs::read_to_string(&input).unwrap();
    assert_eq!(text.lines().count(), 1 + 50 * 4);
    let ids: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 50);
    let res = run(&["coarsen", "--input", input.to_str().unwrap(), "--k", "4"]);
    assert!(res.status.success());
}

#[test]
fn wrong_k_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path(), 5, 4);
    let res = run(&["coarsen", "--input", input.to_str().unwrap(), "--k", "6"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn bad_alpha_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path(), 30, 6);
    let res = analyze(&input, &dir.path().join("out"), &["--alpha0", "3:1:1"]);
    assert_eq!(res.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
}
