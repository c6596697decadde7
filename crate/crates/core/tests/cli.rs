use std::path::Path;
use std::process::Command;

use fhtw_core::io::{read_samples, read_table, write_samples, ColumnKind};
use ndarray::array;

fn fhtw(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_fhtw"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FHTW_THREADS")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let (code, stdout, stderr) = fhtw(args, cwd);
    assert_eq!(code, 0, "{args:?} failed: {stderr}");
    stdout
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn sample_writes_csv_and_sidecar_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["sample", "--model", "ou1d", "--d", "128", "--alpha", "1000", "--n", "12000", "--seed", "1"];
    ok(&[&args[..], &["--out", "a.csv"]].concat(), p);
    ok(&[&args[..], &["--out", "b.csv"]].concat(), p);
    let (kind, x) = read_samples(&p.join("a.csv")).unwrap();
    assert_eq!(kind, ColumnKind::Lattice);
    assert_eq!(x.dim(), (12000, 128));
    assert_eq!(std::fs::read(p.join("a.csv")).unwrap(), std::fs::read(p.join("b.csv")).unwrap());
    let side = json(&p.join("a.json"));
    assert_eq!(side["seed"], 1);
    assert_eq!(side["model"]["kind"], "line1d");
    assert_eq!(side["config"]["alpha"], 1000.0);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let (code, _, err) = fhtw(&["sample", "--model", "ou1d", "--d", "8", "--alpha", "1", "--n", "0", "--out", "z.csv"], p);
    assert_eq!(code, 2, "{err}");
    assert!(!p.join("z.csv").exists());
    assert_eq!(fhtw(&["sample", "--model", "xy", "--n", "3", "--out", "z.csv"], p).0, 2);
    assert_eq!(fhtw(&["nonsense"], p).0, 2);
    assert_eq!(fhtw(&["--threads", "0", "describe-tree", "--d", "4"], p).0, 2);
    let (code, _, err) = fhtw(&["eval", "--model", "missing.json", "--samples", "s.csv", "--out-dir", "o"], p);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("missing.json"));
}

#[test]
fn malformed_csv_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.csv"), "x_1,x_2\n1,oops\n").unwrap();
    let (code, _, err) = fhtw(&["transform", "--input", "bad.csv", "--out", "c.csv"], p);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn transform_matches_haar_example_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let x = array![[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 2.5, 7.0]];
    write_samples(&p.join("x.csv"), ColumnKind::Lattice, &x).unwrap();
    ok(&["transform", "--input", "x.csv", "--out", "c.csv", "--filter", "haar"], p);
    let (cols, c) = read_table(&p.join("c.csv")).unwrap();
    assert_eq!(cols, ["c[1,-1]", "c[1,0]", "c[1,1]", "c[2,1]"]);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for (got, want) in c.row(0).iter().zip([5.0, -2.0, -h, -h]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    ok(&["transform", "--input", "c.csv", "--out", "back.csv", "--filter", "haar", "--inverse"], p);
    let (kind, back) = read_samples(&p.join("back.csv")).unwrap();
    assert_eq!(kind, ColumnKind::Lattice);
    assert!((&back - &x).iter().all(|v| v.abs() < 1e-10));

    // the forward transform refuses wavelet columns
    assert_eq!(fhtw(&["transform", "--input", "c.csv", "--out", "z.csv"], p).0, 2);
    // 2D layout on a non-square width
    let y = ndarray::Array2::from_elem((2, 8), 1.0);
    write_samples(&p.join("y.csv"), ColumnKind::Lattice, &y).unwrap();
    assert_eq!(fhtw(&["transform", "--input", "y.csv", "--out", "z.csv", "--layout", "2d"], p).0, 2);
}

#[test]
fn d4_constant_rows_have_only_the_scalar_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for (layout, d) in [("1d", 16), ("2d", 16)] {
        let x = ndarray::Array2::from_elem((3, d), 2.5);
        write_samples(&p.join("k.csv"), ColumnKind::Lattice, &x).unwrap();
        ok(&["transform", "--input", "k.csv", "--out", "kc.csv", "--layout", layout], p);
        let (_, c) = read_samples(&p.join("kc.csv")).unwrap();
        for row in c.rows() {
            assert!((row[0] - 2.5 * (d as f64).sqrt()).abs() < 1e-10);
            assert!(row.iter().skip(1).all(|v| v.abs() < 1e-10), "{row}");
        }
    }
}

#[test]
fn fit_then_eval_one_dimensional() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["sample", "--model", "ou1d", "--d", "64", "--alpha", "100", "--n", "20000", "--seed", "2", "--out", "s.csv"], p);
    let start = std::time::Instant::now();
    ok(&["fit", "--input", "s.csv", "--rank", "6", "--model-out", "m.json"], p);
    assert!(start.elapsed().as_secs() < 60);
    let report = json(&p.join("m.report.json"));
    assert_eq!(report["args"]["rank"], 6);
    assert_eq!(report["samples"], 20000);
    assert!(report["edges"].as_array().unwrap().len() > 10);

    ok(&["eval", "--model", "m.json", "--samples", "s.csv", "--out-dir", "ev"], p);
    let (cols, corr) = read_table(&p.join("ev/correlation.csv")).unwrap();
    assert_eq!(cols, ["i", "j", "model", "empirical", "difference"]);
    assert_eq!(corr.nrows(), 64 * 64);
    for row in corr.rows() {
        if row[0] == row[1] {
            assert!((row[2] - 1.0).abs() < 1e-10);
        }
        assert!((row[2] - row[3] - row[4]).abs() < 1e-12);
    }
    let summary = json(&p.join("ev/eval.json"));
    let pairs: Vec<_> = summary["marginals"].as_array().unwrap().iter().map(|m| m["pair"].clone()).collect();
    assert_eq!(pairs, [serde_json::json!(["c[15,5]", "c[8,4]"]), serde_json::json!(["c[15,5]", "c[9,4]"])]);
    let (_, grid) = read_table(&p.join("ev/marginal_c15_5_c8_4.csv")).unwrap();
    assert_eq!(grid.nrows(), 60 * 60);
    assert!(!p.join("ev/two_point.csv").exists());
}

#[test]
fn two_point_defaults_to_site_four_four() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        &["sample", "--model", "ou2d", "--m", "8", "--alpha1", "200", "--alpha2", "10", "--n", "12000", "--seed", "3", "--out", "s.csv"],
        p,
    );
    ok(&["fit", "--input", "s.csv", "--layout", "2d", "--rank", "20", "--q", "25", "--model-out", "m.json"], p);
    ok(&["eval", "--model", "m.json", "--samples", "s.csv", "--out-dir", "ev", "--pair", "c[2,2]:c[1,1]"], p);
    let summary = json(&p.join("ev/eval.json"));
    assert_eq!(summary["reference_site"], serde_json::json!([4, 4]));
    let (_, tp) = read_table(&p.join("ev/two_point.csv")).unwrap();
    assert_eq!(tp.nrows(), 64);
    // f(4, 4) is the reference correlated with itself
    let at = tp.rows().into_iter().find(|r| r[0] == 4.0 && r[1] == 4.0).unwrap();
    assert!((at[2] - 1.0).abs() < 1e-10 && (at[3] - 1.0).abs() < 1e-10);
    assert!(summary["max_abs_two_point_error"].as_f64().unwrap() < 0.1);
    assert_eq!(summary["marginals"].as_array().unwrap().len(), 1);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("cfg.json"),
        r#"{"model": "gl1d", "d": 16, "alpha": 5.0, "lambda": 1.0, "n": 400, "burn-in": 500, "seed": 9, "out": "g.csv"}"#,
    )
    .unwrap();
    ok(&["--config", "cfg.json", "sample", "--n", "200"], p);
    let (_, x) = read_samples(&p.join("g.csv")).unwrap();
    assert_eq!(x.dim(), (200, 16));
    let side = json(&p.join("g.json"));
    assert_eq!(side["mcmc"]["config"]["burn_in"], 500);
    assert_eq!(side["config"]["n"], 200);
    assert!(side["mcmc"]["report"]["acceptance"].as_array().unwrap().len() == 8);

    std::fs::write(p.join("bad.json"), r#"{"nope": 1}"#).unwrap();
    assert_eq!(fhtw(&["--config", "bad.json", "sample"], p).0, 2);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let base = ["sample", "--model", "gl1d", "--d", "8", "--alpha", "2", "--lambda", "1", "--n", "300", "--burn-in", "300"];
    ok(&[&["--threads", "1"][..], &base[..], &["--out", "one.csv"]].concat(), p);
    ok(&[&["--threads", "3"][..], &base[..], &["--out", "three.csv"]].concat(), p);
    assert_eq!(std::fs::read(p.join("one.csv")).unwrap(), std::fs::read(p.join("three.csv")).unwrap());
}

#[test]
fn rankstudy_writes_spectra_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let stdout = ok(&["rankstudy", "--case", "1", "--scale", "paper", "--out-dir", "rs"], p);
    assert!(stdout.contains("rank_c = 1"));
    let (cols, spec) = read_table(&p.join("rs/spectrum_x.csv")).unwrap();
    assert_eq!(cols, ["index", "sigma", "sigma_normalized"]);
    assert!((spec.column(2).sum() - 1.0).abs() < 1e-10);
    assert!(p.join("rs/spectrum_c.csv").exists());
    let report = json(&p.join("rs/report.json"));
    assert!(report["ranks"].is_object() || report["ranks"].is_array());
    assert_eq!(fhtw(&["rankstudy", "--case", "9", "--out-dir", "rs"], p).0, 2);
}

#[test]
fn describe_tree_prints_topology() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for (args, levels) in [(vec!["describe-tree", "--d", "32"], 5u32), (vec!["describe-tree", "--layout", "2d", "--m", "4"], 4)] {
        let v: serde_json::Value = serde_json::from_str(&ok(&args, p)).unwrap();
        let nodes = v["nodes"].as_array().unwrap().len();
        assert_eq!(nodes, (1 << levels) + (1 << (levels - 1)) - 1);
        assert_eq!(v["edges"].as_array().unwrap().len(), nodes - 1);
    }
}
