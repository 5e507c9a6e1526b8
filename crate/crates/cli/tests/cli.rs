use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use irtlong::data::write_csv;
use irtlong::family::RatioFamily;
use irtlong::link::CdfKind;
use irtlong::model::{Covariance, FixedEffect, ItemParams, ItemSpec, ModelSpec};
use irtlong::simulate::{simulate_from, Generator};

const SPEC: &str = "\
family = cumulative
cdf = logistic
items.item9.categories = 4
items.item19.categories = 4
fixed_effects = [group, time, group*time]
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_irtlong"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Random-intercept data from known parameters, written as CSV.
fn simulated_csv(dir: &Path, n_subjects: usize) -> (PathBuf, PathBuf) {
    let spec: ModelSpec = SPEC.parse().unwrap();
    let gen = Generator {
        spec: spec.clone(),
        items: ItemParams::per_item(vec![vec![-2.1, 1.0, 2.75], vec![-1.25, 1.4, 3.3]]),
        beta: vec![0.2, -0.3, -0.1],
        covariance: Covariance::intercept(1.5),
        n_subjects,
        times: vec![0.0, 1.0, 2.0, 4.0],
    };
    let data = simulate_from(&gen, 11, 0).unwrap();
    let mut buf = Vec::new();
    write_csv(&data, &spec, &mut buf).unwrap();
    let csv = dir.join("data.csv");
    fs::write(&csv, buf).unwrap();
    (csv, write(dir, "spec.cfg", SPEC))
}

fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn fit_writes_estimates_and_decomposition() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, spec) = simulated_csv(tmp.path(), 120);
    let before = fs::read(&data).unwrap();
    let out = tmp.path().join("fit");
    let res = run(&[
        "fit",
        "--data",
        p(&data),
        "--spec",
        p(&spec),
        "--out",
        p(&out),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert_eq!(fs::read(&data).unwrap(), before, "input untouched");

    let rows = read_csv_rows(&out.join("estimates.csv"));
    for name in ["group", "time", "group*time"] {
        let row = rows
            .iter()
            .find(|r| r[0] == name)
            .unwrap_or_else(|| panic!("row {name}"));
        let est: f64 = row[1].parse().unwrap();
        let se: f64 = row[2].parse().unwrap();
        assert!(se > 0.0 && est.is_finite());
    }
    let decomposition = read_csv_rows(&out.join("probability_decomposition.csv"));
    assert!(decomposition
        .iter()
        .any(|r| r[0] == "trajectory" && r[2] == "group=1"));
    let log: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("run_log.json")).unwrap()).unwrap();
    assert_eq!(log["status"], "ok");
    assert_eq!(log["command"], "fit");
    assert_eq!(log["details"]["ingest"]["subjects"], 120);
    assert!(!out.join(".irtlong.lock").exists());
}

#[test]
fn fit_is_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, spec) = simulated_csv(tmp.path(), 60);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("t{threads}"));
        let res = run(&[
            "fit",
            "--data",
            p(&data),
            "--spec",
            p(&spec),
            "--out",
            p(&out),
            "--threads",
            threads,
        ]);
        assert!(
            res.status.success(),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
        outputs.push(out);
    }
    for name in [
        "estimates.csv",
        "fit_summary.json",
        "probability_decomposition.csv",
        "run_log.json",
    ] {
        assert_eq!(
            fs::read(outputs[0].join(name)).unwrap(),
            fs::read(outputs[1].join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn ingest_errors_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write(tmp.path(), "spec.cfg", SPEC);
    let data = write(
        tmp.path(),
        "bad.csv",
        "subject,visit,time,item,response,group\na,0,0,item9,1,0\na,0,0,item19,4,0\n",
    );
    let res = run(&[
        "fit",
        "--data",
        p(&data),
        "--spec",
        p(&spec),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("line 3") && err.contains("item19"), "{err}");
}

#[test]
fn plotdata_reproduces_category_proportions_at_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write(tmp.path(), "spec.cfg", SPEC);
    let params = write(
        tmp.path(),
        "params.cfg",
        "beta = [0, -0.330, -0.188]\nthresholds.item9 = [-2.1, 1, 2.75]\nthresholds.item19 = [-1.25, 1.4, 3.3]\ntimes = [0, 12]\n",
    );
    let out = tmp.path().join("plot");
    let res = run(&[
        "plotdata",
        "--out",
        p(&out),
        "--spec",
        p(&spec),
        "--params",
        p(&params),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let rows = read_csv_rows(&out.join("probability_decomposition.csv"));
    let at_zero: Vec<f64> = rows
        .iter()
        .filter(|r| r[0] == "theta_grid" && r[1] == "item9" && r[4] == "0.000000")
        .map(|r| r[6].parse().unwrap())
        .collect();
    // Proportions read off a plot as 0.10, 0.62, 0.22, 0.06; the exact
    // values differ from those readings by up to 0.011.
    let printed = [0.10, 0.62, 0.22, 0.06];
    assert_eq!(at_zero.len(), 4);
    for (got, want) in at_zero.iter().zip(printed) {
        assert!((got - want).abs() < 0.012, "{got} vs {want}");
    }
    assert!((at_zero[1] - 0.62).abs() < 0.005);
    assert!((at_zero.iter().sum::<f64>() - 1.0).abs() < 1e-5);

    let curves = read_csv_rows(&out.join("cdf_curves.csv"));
    assert_eq!(curves.len(), 4 * 241);
    let disc = read_csv_rows(&out.join("discrimination_curves.csv"));
    assert_eq!(disc.len(), 4 * 241);
}

#[test]
fn plotdata_without_params_writes_curves_only() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("plot");
    let res = run(&["plotdata", "--out", p(&out)]);
    assert!(res.status.success());
    assert!(out.join("cdf_curves.csv").exists());
    assert!(!out.join("probability_decomposition.csv").exists());
}

#[test]
fn lock_file_blocks_a_second_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("busy");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".irtlong.lock"), "123\n").unwrap();
    let res = run(&["plotdata", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("in use"));
    assert!(!out.join("cdf_curves.csv").exists());
}

const SMALL_MANIFEST: &str = "\
subjects = 40
times = [0, 2, 4, 8]
fit_models = [lmm, cumulative]
scenario.small.generator = cumulative
scenario.small.deltas = far
scenario.small.beta1 = 0.3
scenario.small.sigma1_sq = 0.2
";

#[test]
fn zero_replications_rejected_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write(tmp.path(), "m.cfg", SMALL_MANIFEST);
    let out = tmp.path().join("sim");
    let res = run(&[
        "simulate",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
        "--replications",
        "0",
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists(), "no output directory created");
    let res = run(&[
        "simulate",
        "--builtin",
        "--out",
        p(&out),
        "--replications",
        "0",
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn invalid_manifest_rejected_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write(tmp.path(), "m.cfg", "scenario.x.generator = cumulative\n");
    let out = tmp.path().join("sim");
    let res = run(&["simulate", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn simulate_is_identical_for_two_and_eight_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write(tmp.path(), "m.cfg", SMALL_MANIFEST);
    let mut dirs = Vec::new();
    for threads in ["2", "8"] {
        let out = tmp.path().join(format!("w{threads}"));
        let res = run(&[
            "simulate",
            "--manifest",
            p(&manifest),
            "--out",
            p(&out),
            "--replications",
            "3",
            "--seed",
            "5",
            "--threads",
            threads,
        ]);
        assert!(res.status.code() == Some(0) || res.status.code() == Some(2));
        dirs.push(out);
    }
    for name in ["selection_summary.csv", "cells/small.csv", "run_log.json"] {
        assert_eq!(
            fs::read(dirs[0].join(name)).unwrap(),
            fs::read(dirs[1].join(name)).unwrap(),
            "{name}"
        );
    }
    let log: serde_json::Value =
        serde_json::from_slice(&fs::read(dirs[0].join("run_log.json")).unwrap()).unwrap();
    assert_eq!(log["seed"], 5);
    assert!(log["details"]["scenarios"][0]["seed"].is_u64());
}

/// Strong slope variance: no class should prefer the intercept-only model.
#[test]
fn large_slope_variance_cell_never_selects_m1() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write(
        tmp.path(),
        "m.cfg",
        "scenario.cell.generator = adjacent\nscenario.cell.deltas = near\nscenario.cell.beta1 = 0.3\nscenario.cell.sigma1_sq = 0.2\n",
    );
    let out = tmp.path().join("sim");
    let res = run(&[
        "simulate",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
        "--replications",
        "20",
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let rows = read_csv_rows(&out.join("selection_summary.csv"));
    assert_eq!(rows.len(), 3);
    let header = csv::Reader::from_path(out.join("selection_summary.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    let m1 = header.iter().position(|h| h == "m1_frequency").unwrap();
    for r in &rows {
        assert_eq!(r[m1].parse::<f64>().unwrap(), 0.0, "{r:?}");
    }
}

#[test]
fn score_writes_scores_and_lmm_fits() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, spec) = simulated_csv(tmp.path(), 80);
    let out = tmp.path().join("score");
    let res = run(&[
        "score",
        "--data",
        p(&data),
        "--spec",
        p(&spec),
        "--out",
        p(&out),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let scores = read_csv_rows(&out.join("scores.csv"));
    assert_eq!(scores.len(), 80 * 4);
    let lmm: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("lmm.json")).unwrap()).unwrap();
    assert!(lmm["selected"] == "M1" || lmm["selected"] == "M2");
    assert!(lmm["m2"]["loglik"].as_f64().unwrap() >= lmm["m1"]["loglik"].as_f64().unwrap() - 1e-6);
}

#[test]
fn rejects_unknown_command_and_missing_inputs() {
    assert!(!run(&["frobnicate"]).status.success());
    let tmp = tempfile::tempdir().unwrap();
    let res = run(&[
        "fit",
        "--data",
        p(&tmp.path().join("none.csv")),
        "--spec",
        p(&tmp.path().join("none.cfg")),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn spec_round_trips_through_config_text() {
    let spec = ModelSpec::new(
        RatioFamily::Adjacent,
        CdfKind::Gaussian,
        vec![ItemSpec::new("a", 3), ItemSpec::new("b", 5)],
    )
    .with_fixed_effects(vec![FixedEffect::time()]);
    let again: ModelSpec = spec.to_config_string().parse().unwrap();
    assert_eq!(again, spec);
}
