use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pairwise_consensus::experiments::{read_rows, AggregateRow, ModelName};

fn pcl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcl"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PCL_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn pcl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{
  "model": "scalar",
  "N_grid": [5, 10],
  "eps_grid": [0.1, 0.05],
  "trials": 25,
  "master_seed": 11
}"#;

#[test]
fn simulate_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    for (out, workers) in [("a", "1"), ("b", "4")] {
        let o = pcl(
            &["simulate", "--config", "cfg.json", "--output", out, "--workers", workers],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["trials.csv", "aggregate.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("# pcl "), "{f} lacks the header line");
        assert!(text.lines().next().unwrap().ends_with("master_seed=11"));
    }
}

#[test]
fn trials_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    let o = pcl(
        &["simulate", "--config", "cfg.json", "--trials", "10", "--output", "out", "--format", "json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<AggregateRow> = read_rows(&dir.path().join("out/aggregate.json")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.trials == 10 && r.model == ModelName::Scalar));
}

#[test]
fn seed_flag_beats_config_and_env() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pcl"))
        .args(["simulate", "--config", "cfg.json", "--seed", "99", "--output", "s"])
        .current_dir(dir.path())
        .env("PCL_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let head = fs::read_to_string(dir.path().join("s/aggregate.csv")).unwrap();
    assert!(head.lines().next().unwrap().ends_with("master_seed=99"));
}

#[test]
fn missing_model_is_a_usage_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"N_grid": [5], "eps_grid": [0.1], "trials": 3}"#,
    )
    .unwrap();
    let o = pcl(&["simulate", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model"), "{}", stderr(&o));
}

#[test]
fn invalid_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"model": "scalar", "N_grid": [1], "eps_grid": [0.1], "trials": 3}"#,
    )
    .unwrap();
    let o = pcl(&["simulate", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("N_grid"), "{}", stderr(&o));

    let o = pcl(&["bounds", "--formula", "t-eps-uniform", "--n", "10"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = pcl(&["no-such-command"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcl(&["simulate", "--config", "nope.json"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    // a regular file where the output directory should go
    fs::write(dir.path().join("blocker"), b"x").unwrap();
    let o = pcl(&["simulate", "--config", "cfg.json", "--output", "blocker/out"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bounds_prints_worked_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcl(
        &["bounds", "--formula", "t-eps-uniform", "--n", "10", "--eps", "0.01"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("formula,inputs,exact,simplified"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "t-eps-uniform");
    let simplified: f64 = row[3].parse().unwrap();
    assert!((simplified - 160.82).abs() < 5e-3, "{simplified}");
}

#[test]
fn markov_rows_and_regime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcl(&["markov", "--n", "2", "--c", "0.3333333333333333"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let closed: f64 = row[2].parse().unwrap();
    assert!((closed - 12.0).abs() < 1e-9);

    let o = pcl(&["markov", "--n", "3", "--c", "0.6", "--closed-form-only"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_recovers_synthetic_law() {
    let dir = tempfile::tempdir().unwrap();
    // T = 1.5 N ln(1/eps) + N ln N - 2 N + 7, exactly
    let mut csv = String::from(
        "# synthetic\nmodel,N,D,epsilon,trials,t_hat_mean,t_hat_std,t_hat_stderr,thd_hat_mean,thd_hat_std,bound_exact,bound_simplified\n",
    );
    for n in [5usize, 10, 50, 100, 250] {
        for eps in [1e-3, 1e-2, 1e-1] {
            let nf = n as f64;
            let t = 1.5 * nf * (1.0f64 / eps).ln() + nf * nf.ln() - 2.0 * nf + 7.0;
            csv.push_str(&format!("scalar,{n},1,{eps},100,{t},1.0,0.1,,,inf,inf\n"));
        }
    }
    fs::write(dir.path().join("agg.csv"), csv).unwrap();
    let o = pcl(&["fit", "--aggregate", "agg.csv", "--output", "fits.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fits.json")).unwrap()).unwrap();
    let group = &v["groups"][0];
    let per_n = group["eps_fits"].as_array().unwrap();
    assert_eq!(per_n.len(), 5);
    for fit in per_n {
        // 1.5 N ln(1/eps) = -3 (N/2) ln eps
        let c = fit["c"].as_f64().unwrap();
        assert!((c - 0.5).abs() < 1e-9, "{fit}");
    }
    let off = &group["offset"]["coefficients"];
    assert!((off["a"].as_f64().unwrap() - 1.0).abs() < 1e-9, "{off}");
    assert!((off["b"].as_f64().unwrap() + 2.0).abs() < 1e-9, "{off}");
    assert!((off["f"].as_f64().unwrap() - 7.0).abs() < 1e-7, "{off}");
}

#[test]
fn malformed_aggregate_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("agg.csv"), "model,N\nscalar,notanumber\n").unwrap();
    let o = pcl(&["fit", "--aggregate", "agg.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn check_identities_passes_with_seed_7() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcl(&["check-identities", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn reproduce_desk_writes_every_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcl(&["reproduce-paper", "--scale", "desk", "--output", "rep"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = dir.path().join("rep");
    for grid in ["scalar", "scalar_range", "circle", "box_d2"] {
        let g = rep.join(grid);
        for f in ["trials.csv", "aggregate.csv", "resolved_config.json", "summary.json"] {
            assert!(g.join(f).is_file(), "missing {grid}/{f}");
        }
        let rows: Vec<AggregateRow> = read_rows(&g.join("aggregate.csv")).unwrap();
        assert!(!rows.is_empty());
    }
}
