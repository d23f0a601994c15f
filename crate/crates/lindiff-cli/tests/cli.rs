use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lindiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lindiff")).args(args).output().expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_string_lossy().into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).expect("csv exists");
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn header_of(path: &Path) -> Vec<String> {
    read_csv(path).0
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_the_four_files_with_exact_headers() {
    let dir = tempfile::tempdir().unwrap();
    let o = lindiff(&["run", "--out", &out_arg(dir.path()), "--set", "dynamics.tau_points=21"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        header_of(&dir.path().join("trajectories.csv")),
        ["mode_index", "lambda_target", "tau", "sigma", "psi", "lambda_gen"]
    );
    assert_eq!(
        header_of(&dir.path().join("emergence.csv")),
        ["mode_index", "lambda_target", "tau_star", "branch", "excluded_flag"]
    );
    let fit: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    for b in fit["branches"].as_array().unwrap() {
        for key in ["branch", "alpha", "intercept", "r_squared", "n_used"] {
            assert!(b.get(key).is_some(), "fit branch lacks {key}");
        }
    }
    let m = manifest(dir.path());
    for key in ["config", "versions", "seed", "wall_clock", "oracle_max_relative_deviation"] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
}

#[test]
fn floats_carry_seventeen_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lindiff(&["simulate", "--out", &out_arg(dir.path()), "--tau", "0.5"]).status.success());
    let (_, rows) = read_csv(&dir.path().join("weights.csv"));
    let psi = &rows[0][4];
    let mantissa = psi.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
    assert_eq!(mantissa.len(), 17, "{psi}");
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = lindiff(&["run", "--seed", "77", "--out", &out_arg(d.path()), "--set", "dynamics.tau_points=31"]);
        assert!(o.status.success());
    }
    for name in ["trajectories.csv", "emergence.csv", "fit.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let strip = |d: &Path| {
        let mut m = manifest(d);
        m.as_object_mut().unwrap().remove("wall_clock");
        m.as_object_mut().unwrap().remove("config");
        m
    };
    assert_eq!(strip(a.path()), strip(b.path()));
}

#[test]
fn json_format_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let o = lindiff(&["emergence", "--format", "json", "--out", &out_arg(dir.path()), "--set", "dynamics.tau_points=21"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("emergence.json")).unwrap()).unwrap();
    assert!(v.as_array().unwrap()[0].get("tau_star").is_some());
}

#[test]
fn untrained_sample_equals_the_asymptote_column() {
    let dir = tempfile::tempdir().unwrap();
    let o = lindiff(&["sample", "--arch", "two-layer", "--tau", "0", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("samples.csv"));
    let gen = header.iter().position(|h| h == "lambda_gen").unwrap();
    let tau0 = header.iter().position(|h| h == "lambda_gen_tau0").unwrap();
    assert!(!rows.is_empty());
    for r in rows {
        assert_eq!(r[gen], r[tau0]);
    }
}

#[test]
fn kl_beyond_convergence_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let o = lindiff(&["kl", "--tau", "1e6", "--out", &out_arg(dir.path())]);
    assert!(o.status.success());
    let (header, rows) = read_csv(&dir.path().join("kl.csv"));
    let total = header.iter().position(|h| h == "kl_total").unwrap();
    for r in rows {
        assert!(r[total].parse::<f64>().unwrap() < 1e-4);
    }
}

#[test]
fn oracle_validation_records_the_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let o = lindiff(&[
        "run",
        "--arch",
        "two-layer",
        "--set",
        "model.dim=8",
        "--set",
        "dynamics.tau_points=41",
        "--validate-with-oracle",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dev = manifest(dir.path())["oracle_max_relative_deviation"].as_f64().unwrap();
    assert!(dev < 1e-6, "{dev}");
}

#[test]
fn invalid_gray_zone_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = lindiff(&["run", "--set", "analysis.gray_zone.lower=1.5", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("analysis.gray_zone.lower"));
}

#[test]
fn config_file_keys_are_read_and_unknown_keys_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# small run\nmodel.dim = 3\ndynamics.tau = 0.1, 1\n").unwrap();
    let out = dir.path().join("o");
    let o = lindiff(&["simulate", "--config", &out_arg(&cfg), "--out", &out_arg(&out)]);
    assert!(o.status.success());
    assert_eq!(read_csv(&out.join("weights.csv")).1.len(), 3 * 2 * 3);

    std::fs::write(&cfg, "model.dimension = 3\n").unwrap();
    let o = lindiff(&["simulate", "--config", &out_arg(&cfg), "--out", &out_arg(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.dimension"));
}

#[test]
fn exit_codes() {
    let o = lindiff(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(lindiff(&["validate", "--suite", "nonsense"]).status.code(), Some(2));
    assert_eq!(lindiff(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lindiff(&["run", "--arch", "deep", "--out", &out_arg(dir.path())]).status.code(), Some(1));
}

#[test]
fn validate_all_exits_zero() {
    let o = lindiff(&["validate", "--suite", "all"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn simulate_checks_every_architecture_against_the_oracle() {
    for (arch, variant) in [("one-layer", "v-pred"), ("two-layer", "flow-match"), ("residual", "edm")] {
        let dir = tempfile::tempdir().unwrap();
        let o = lindiff(&[
            "simulate",
            "--arch",
            arch,
            "--set",
            &format!("variant.name={variant}"),
            "--set",
            "model.dim=5",
            "--set",
            "dynamics.tau_points=25",
            "--validate-with-oracle",
            "--out",
            &out_arg(dir.path()),
        ]);
        assert!(o.status.success(), "{arch} {variant}: {}", String::from_utf8_lossy(&o.stderr));
        let dev = manifest(dir.path())["oracle_max_relative_deviation"].as_f64().unwrap();
        assert!(dev < 1e-6, "{arch} {variant}: {dev}");
    }
    let dir = tempfile::tempdir().unwrap();
    let o = lindiff(&["simulate", "--arch", "deep", "--validate-with-oracle", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("oracle.validate"));
}
