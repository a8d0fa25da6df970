use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pnc_cli::formats::{read_table, Table};
use tempfile::TempDir;

fn pnc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnc")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = pnc(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn table(dir: &Path, name: &str) -> Table {
    read_table(&dir.join(name)).unwrap()
}

fn records(dir: &Path, name: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(dir.join(name)).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn numeric(rows: &[Vec<String>], column: usize) -> Vec<f64> {
    rows.iter().map(|r| r[column].parse().unwrap()).collect()
}

fn max_abs_diff(a: &Table, b: &Table) -> f64 {
    (&a.data - &b.data).abs().max()
}

fn simulated(dir: &TempDir, preset: &[&str]) -> PathBuf {
    let mut args = vec!["simulate"];
    args.extend_from_slice(preset);
    args.extend_from_slice(&["--out", "data.csv"]);
    ok(dir.path(), &args);
    dir.path().join("data.csv")
}

#[test]
fn geodesic_prints_six_digits() {
    let dir = TempDir::new().unwrap();
    let out = pnc(dir.path(), &["geodesic", "--alpha", "pi/6", "--r1", "7", "--r2", "10", "--theta", "pi/3"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "5.26844");
    let out = pnc(dir.path(), &["geodesic", "--alpha", "pi/6", "--r1", "7", "--r2", "10", "--theta", "0"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "3.00000");
    let a = pnc(dir.path(), &["geodesic", "--alpha", "0.4", "--r1", "2", "--r2", "5", "--theta", "1.1"]);
    let b = pnc(dir.path(), &["geodesic", "--alpha", "0.4", "--r1", "5", "--r2", "2", "--theta", "-1.1"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(code(&pnc(dir.path(), &["geodesic", "--alpha", "2", "--r1", "1", "--r2", "1", "--theta", "0"])), 4);
}

#[test]
fn fit_then_backfit_reproduces_input() {
    let dir = TempDir::new().unwrap();
    simulated(&dir, &["table1", "--n", "200", "--seed", "3"]);
    for residual in ["riemannian", "chordal"] {
        ok(dir.path(), &["fit", "data.csv", "--residual", residual]);
        ok(dir.path(), &["backfit", "model.json", "scores.csv"]);
        let err = max_abs_diff(&table(dir.path(), "recon.csv"), &table(dir.path(), "data.csv"));
        assert!(err < 1e-8, "{residual}: {err:e}");
    }
    let scores = table(dir.path(), "scores.csv");
    assert_eq!(scores.columns, ["score_1", "score_2", "score_3", "size"]);
    assert_eq!(table(dir.path(), "scores.polar.csv").columns, ["sx", "sy"]);
    assert_eq!(records(dir.path(), "scores.variance.csv").1.len(), 3);
    assert!(dir.path().join("model.manifest.json").is_file());
}

#[test]
fn on_cone_data_have_zero_trailing_scores() {
    let dir = TempDir::new().unwrap();
    simulated(&dir, &["fig3", "--alpha", "pi/4", "--n", "30"]);
    ok(dir.path(), &["fit", "data.csv"]);
    let scores = table(dir.path(), "scores.csv");
    let trailing = scores.column("score_2").unwrap();
    let leading = scores.column("score_1").unwrap();
    assert!(trailing.iter().all(|s| s.abs() < 1e-8));
    assert!(leading.iter().any(|s| s.abs() > 0.1));
}

#[test]
fn keep_zero_gives_mean_shapes_at_observed_sizes() {
    let dir = TempDir::new().unwrap();
    simulated(&dir, &["table1", "--n", "50"]);
    ok(dir.path(), &["fit", "data.csv"]);
    ok(dir.path(), &["backfit", "model.json", "scores.csv", "--keep", "0", "--out", "mean.csv"]);
    let mean = table(dir.path(), "mean.csv");
    let sizes = table(dir.path(), "scores.csv").column("size").unwrap();
    for (j, r) in sizes.iter().enumerate() {
        let c = mean.data.column(j);
        assert!((c.norm() - r).abs() < 1e-9);
        let first = mean.data.column(0) / mean.data.column(0).norm();
        assert!((c / c.norm() - first).norm() < 1e-9);
    }
}

#[test]
fn sweep_writes_one_row_per_step() {
    let dir = TempDir::new().unwrap();
    simulated(&dir, &["table1", "--n", "50"]);
    ok(dir.path(), &["fit", "data.csv"]);
    std::fs::write(dir.path().join("unit.csv"), "size\n0.5\n1.5\n").unwrap();
    ok(dir.path(), &["backfit", "model.json", "--sizes", "unit.csv", "--sweep", "1:-2:2:9", "--out", "path.csv"]);
    let path = table(dir.path(), "path.csv");
    assert_eq!(path.data.ncols(), 9);
    assert_eq!(path.columns.last().unwrap(), "score_1");
    for c in path.data.rows(0, 4).column_iter() {
        assert!((c.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fast_fit_round_trip() {
    let dir = TempDir::new().unwrap();
    simulated(&dir, &["table1", "--n", "40"]);
    ok(dir.path(), &["fit", "data.csv", "--fast", "3", "--out", "fast.json"]);
    ok(dir.path(), &["backfit", "fast.json", "scores.csv"]);
    assert!(max_abs_diff(&table(dir.path(), "recon.csv"), &table(dir.path(), "data.csv")) < 1e-8);
    let out = pnc(dir.path(), &["fit", "data.csv", "--fast", "4"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("p_max = 3"));
}

#[test]
fn input_errors_carry_exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.csv"), "a,b,c\n1,2,3\n1,x,2\n").unwrap();
    let out = pnc(d, &["fit", "bad.csv"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2, column 2"));

    std::fs::write(d.join("apex.csv"), "a,b,c\n1,2,3\n0,0,0\n1,1,2\n0,0,0\n2,1,1\n").unwrap();
    let out = pnc(d, &["fit", "apex.csv"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("2, 4"));

    let out = pnc(d, &["simulate", "nonsense"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("fig3, spiral, table1"));

    assert_eq!(code(&pnc(d, &["fit", "missing.csv"])), 2);
    assert_eq!(code(&pnc(d, &["fit", "apex.csv", "--residual", "euclidean"])), 4);
}

#[test]
fn backfit_rejects_mismatched_scores() {
    let dir = TempDir::new().unwrap();
    simulated(&dir, &["table1", "--n", "30"]);
    ok(dir.path(), &["fit", "data.csv"]);
    std::fs::write(dir.path().join("short.csv"), "score_1,score_2,size\n0,0,1\n").unwrap();
    assert_eq!(code(&pnc(dir.path(), &["backfit", "model.json", "short.csv"])), 2);
}

#[test]
fn simulate_presets() {
    let dir = TempDir::new().unwrap();
    simulated(&dir, &["fig3", "--alpha", "pi/6", "--n", "10"]);
    let t = table(dir.path(), "data.csv");
    assert_eq!(t.data.shape(), (3, 30));
    let labels = t.labels.unwrap();
    assert_eq!((labels[0].as_str(), labels[29].as_str()), ("1", "3"));

    simulated(&dir, &["table1", "--n", "20", "--seed", "0"]);
    assert_eq!(table(dir.path(), "data.csv").data.shape(), (4, 20));

    simulated(&dir, &["spiral", "--n", "5"]);
    let s = table(dir.path(), "data.csv");
    let angle = (s.data[(2, 0)] / s.data.column(0).norm()).acos();
    assert!((angle - std::f64::consts::PI / 9.0).abs() < 1e-12);
    assert!(dir.path().join("data.manifest.json").is_file());
}

#[test]
fn generator_files_are_accepted() {
    let dir = TempDir::new().unwrap();
    let spec = pnc_cli::formats::GeneratorFile::from(&pnc_core::simulate::GeneratorSpec::table1(25, 4));
    std::fs::write(dir.path().join("gen.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    simulated(&dir, &["gen.json"]);
    let from_file = std::fs::read(dir.path().join("data.csv")).unwrap();
    simulated(&dir, &["table1", "--n", "25", "--seed", "4"]);
    assert_eq!(from_file, std::fs::read(dir.path().join("data.csv")).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "table1", "--n", "60", "--seed", "9", "--sigma", "0.1", "--out", "a.csv"]);
    ok(d, &["simulate", "table1", "--n", "60", "--seed", "9", "--sigma", "0.1", "--out", "b.csv"]);
    assert_eq!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
    ok(d, &["fit", "a.csv", "--scores", "s1.csv", "--out", "m1.json"]);
    ok(d, &["fit", "b.csv", "--scores", "s2.csv", "--out", "m2.json"]);
    assert_eq!(std::fs::read(d.join("s1.csv")).unwrap(), std::fs::read(d.join("s2.csv")).unwrap());
    assert_eq!(std::fs::read(d.join("m1.json")).unwrap(), std::fs::read(d.join("m2.json")).unwrap());
}

#[test]
fn bootstrap_outputs_do_not_depend_on_threads() {
    let dir = TempDir::new().unwrap();
    simulated(&dir, &["table1", "--n", "60"]);
    let run = |threads: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_pnc"))
            .current_dir(dir.path())
            .env("PNC_THREADS", threads)
            .args(["bootstrap", "data.csv", "--B", "20", "--seed", "5", "--out", out])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(dir.path().join(out)).unwrap()
    };
    assert_eq!(run("1", "one.csv"), run("4", "four.csv"));
    let (header, _) = records(dir.path(), "one.csv");
    assert_eq!(header, ["parameter", "estimate", "lower", "upper", "normalized_width"]);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("one.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["B"], 20);
    assert_eq!(meta["skipped"], 0);
    let bad = Command::new(env!("CARGO_BIN_EXE_pnc"))
        .current_dir(dir.path())
        .env("PNC_THREADS", "zero")
        .args(["geodesic", "--alpha", "1", "--r1", "1", "--r2", "1", "--theta", "0"])
        .output()
        .unwrap();
    assert_eq!(code(&bad), 4);
}

#[test]
fn bootstrap_of_identical_rows_has_zero_width() {
    let dir = TempDir::new().unwrap();
    let rows = "x1,x2,x3\n".to_string() + &"1,2,3\n".repeat(8);
    std::fs::write(dir.path().join("same.csv"), rows).unwrap();
    ok(dir.path(), &["bootstrap", "same.csv", "--B", "2"]);
    let (_, rows) = records(dir.path(), "bootstrap.csv");
    let widths = numeric(&rows, 4);
    assert!(widths.iter().all(|w| *w == 0.0));
}

#[test]
fn compare_grid_columns() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["compare", "--alphas", "pi/6", "--sigmas", "0.1", "--reps", "1", "--out", "one.csv"]);
    let (header, rows) = records(d, "one.csv");
    assert_eq!(header, ["method", "components", "alpha", "sigma", "mean_backfit_distance", "variance_explained"]);
    assert_eq!(rows.len(), 3);
    ok(d, &["compare", "--alphas", "pi/12,pi/3", "--sigmas", "0.1", "--reps", "4", "--out", "grid.csv"]);
    let (header, rows) = records(d, "grid.csv");
    assert_eq!(header.last().unwrap(), "ci_hi");
    assert_eq!(rows.len(), 6);
    ok(d, &["compare", "--alphas", "pi/4", "--sigmas", "0.3", "--components", "3", "--reps", "2", "--out", "full.csv"]);
    let (_, rows) = records(d, "full.csv");
    let full = numeric(&rows, 4);
    assert!(full.iter().all(|x| *x < 1e-6), "{full:?}");
    assert!(d.join("full.manifest.json").is_file());
}
