use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
[system]
n_sites = 2
energies_cm1 = [0.0, 0.0]
couplings = [[1, 2, 300.0]]

[bath]
family = "ohmic-exponential"
eta = 1.0
omega_c_cm1 = 200.0

[weighting]
kind = "step"
omega_h_cm1 = 200.0

[run]
temperature_K = 300.0
t_max_fs = 60.0
dt_fs = 0.5
stride = 4

[output]
csv_path = "run.csv"
json_path = "run.json"
"#;

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ppqme-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn ppqme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppqme")).args(args).output().unwrap()
}

fn run_in(dir: &Path, sub: &str, text: &str, extra: &[&str]) -> Output {
    let cfg = write_config(dir, text);
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    ppqme(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i]).collect()
}

#[test]
fn simulate_is_deterministic() {
    let a = scratch_dir("det-a");
    let b = scratch_dir("det-b");
    for d in [&a, &b] {
        let o = run_in(d, "simulate", BASE, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ca = fs::read(a.join("run.csv")).unwrap();
    assert_eq!(ca, fs::read(b.join("run.csv")).unwrap());
    let (header, rows) = read_csv(&a.join("run.csv"));
    assert_eq!(header, ["t_fs", "P_1", "P_2", "Re_S_12", "Im_S_12", "trace", "min_eigenvalue"]);
    assert_eq!(rows.len(), 31);
    assert!((rows[0][1] - 1.0).abs() < 1e-12);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["run"]["dt_fs"], 0.5);
    assert!(meta["initial_condition"].as_str().unwrap().starts_with("default"));
    assert_eq!(meta["frame"]["eigenvalues_cm1"].as_array().unwrap().len(), 2);
    assert!(meta["diagnostics"]["max_trace_drift"].as_f64().unwrap() < 1e-10);
}

#[test]
fn missing_dt_is_a_config_error_naming_the_key() {
    let d = scratch_dir("missing-dt");
    let o = run_in(&d, "simulate", &BASE.replace("dt_fs = 0.5\n", ""), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dt_fs"), "{}", stderr(&o));
    assert!(!d.join("run.csv").exists());
}

#[test]
fn ohmic_full_transformation_is_a_numerical_error() {
    let d = scratch_dir("divergent");
    let text = BASE.replace("kind = \"step\"\nomega_h_cm1 = 200.0", "kind = \"unity\"");
    let o = run_in(&d, "simulate", &text, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("divergent_integral"), "{}", stderr(&o));
}

#[test]
fn small_alpha_needs_the_flag() {
    let d = scratch_dir("alpha");
    let text = BASE.replace("kind = \"step\"", "kind = \"smooth\"\nalpha = 1.0");
    assert_eq!(run_in(&d, "simulate", &text, &[]).status.code(), Some(2));
    let o = run_in(&d, "simulate", &text, &["--allow-divergent-alpha"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn step_dump_has_vanishing_m_and_real_values_at_zero() {
    let d = scratch_dir("dump-step");
    let o = run_in(&d, "dump-correlations", BASE, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&d.join("run_correlations.csv"));
    for (i, h) in header.iter().enumerate() {
        if h.contains("_M_") {
            assert!(rows.iter().all(|r| r[i] == 0.0), "{h}");
        }
        if h.starts_with("Im_") {
            assert_eq!(rows[0][i], 0.0, "{h}");
        }
    }
}

#[test]
fn zero_weighting_dump() {
    let d = scratch_dir("dump-zero");
    let text = BASE.replace("kind = \"step\"\nomega_h_cm1 = 200.0", "kind = \"zero\"");
    let o = run_in(&d, "dump-correlations", &text, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&d.join("run_correlations.csv"));
    for (i, h) in header.iter().enumerate() {
        let values: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        if h.contains("_K_") || h.contains("_M_") || h.contains("_h_") {
            assert!(values.iter().all(|&v| v == 0.0), "{h}");
        }
        if h.starts_with("Re_f_") {
            assert!(values.iter().all(|&v| v == 1.0), "{h}");
        }
        if h.starts_with("Im_f_") {
            assert!(values.iter().all(|&v| v == 0.0), "{h}");
        }
    }
    assert!(column(&header, &rows, "Re_C_1_1")[0] > 0.0);
}

#[test]
fn sweep_writes_one_trajectory_per_value_and_a_summary() {
    let d = scratch_dir("sweep");
    let text = BASE.replace("kind = \"step\"", "kind = \"smooth\"\nalpha = 2.0");
    let o = run_in(&d, "sweep", &text, &["--param", "alpha"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(d.join("sweep_alpha_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "alpha,coherence_metric,P_1_final,status");
    assert_eq!(lines.len(), 4);
    for (line, v) in lines[1..].iter().zip(["2", "3", "4"]) {
        assert!(line.starts_with(&format!("{v},")) && line.ends_with(",ok"), "{line}");
        assert!(d.join(format!("sweep_alpha_{v}.csv")).exists());
    }
}

#[test]
fn sweep_isolates_failed_points() {
    let d = scratch_dir("sweep-fail");
    let text = BASE.replace("kind = \"step\"", "kind = \"smooth\"\nalpha = 2.0");
    let o = run_in(&d, "sweep", &text, &["--param", "alpha", "--values", "3,0.5"]);
    assert_eq!(o.status.code(), Some(3));
    let summary = fs::read_to_string(d.join("sweep_alpha_summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with(",ok"));
    assert!(summary.lines().nth(2).unwrap().contains("error"));
}

#[test]
fn empty_sweep_is_a_warning_only() {
    let d = scratch_dir("sweep-empty");
    let o = run_in(&d, "sweep", BASE, &["--param", "omega_h", "--values", ""]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    assert!(!d.join("sweep_omega_h_summary.csv").exists());
}

#[test]
fn validate_reports_and_negative_control_fails() {
    let o = ppqme(&["validate"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{out}");
    assert!(out.contains("W = 0 Redfield equivalence"));
    let bad = ppqme(&["validate", "--corrupt-debye-waller"]);
    assert_eq!(bad.status.code(), Some(4));
    let out = String::from_utf8_lossy(&bad.stdout);
    assert!(out.lines().any(|l| l.starts_with("FAIL w consistency")), "{out}");
}
