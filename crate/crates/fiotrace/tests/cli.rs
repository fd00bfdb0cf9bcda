use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiotrace")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SCALED_ROTATION: &str = r#"
name = "quarter_turn"
description = "rotation by a quarter turn minus epsilon"
seed = 3

[space]
dim_m = 2
dim_x = 1

[params]
alpha = 1.2

[canonical]
lift = ["x[1]*cos($alpha) - y[1]*sin($alpha)", "x[1]*sin($alpha) + y[1]*cos($alpha)"]
lift_inverse = ["x[1]*cos($alpha) + y[1]*sin($alpha)", "-x[1]*sin($alpha) + y[1]*cos($alpha)"]

[chart]
w0 = [1.0, 0.5]
"#;

#[test]
fn list_scenarios_names_every_builtin() {
    let o = run(&["list-scenarios"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for name in ["rotation", "halfwave", "fiberpair", "shift_along_x", "parabola_tangency", "pdo_conormal"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn check_from_file_writes_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    fs::write(&cfg, SCALED_ROTATION).unwrap();
    let out = dir.path().join("out");
    let o = run(&["check", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("scenario = quarter_turn"));
    assert!(report.contains("seed = 5"));
    assert!(report.contains("param.alpha = 1.2"));
    assert!(report.contains("traced_order = 0.5"));
    let checks = fs::read_to_string(out.join("checks.csv")).unwrap();
    assert!(checks.starts_with("check,verdict,value,threshold,detail\n"));
    assert!(checks.contains("theorem.condition2,pass"));
}

#[test]
fn invalid_config_reports_section_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, SCALED_ROTATION.replace("$alpha) - y[1]", "$beta) - y[1]")).unwrap();
    let o = run(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("[canonical] line 14") && err.contains("$beta"), "{err}");

    let o = run(&["check", "--scenario", "rotation", "--param", "nope=1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["check", "--scenario", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown scenario"));
}

#[test]
fn downstream_stages_need_force_after_failed_checks() {
    let o = run(&["amplitude", "--scenario", "shift_along_x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    assert!(stdout(&o).is_empty());

    let o = run(&["amplitude", "--scenario", "shift_along_x", "--force", "--w-grid", "points:0.2,1"]);
    assert_eq!(o.status.code(), Some(2));
    let csv = stdout(&o);
    let row = csv.lines().nth(1).unwrap();
    assert!(row.contains(",derived,false,"), "{csv}");
}

fn csv_bytes(dir: &Path, args: &[&str], file: &str) -> Vec<u8> {
    let mut full = args.to_vec();
    full.extend(["--out", dir.to_str().unwrap()]);
    let o = run(&full);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    fs::read(dir.join(file)).unwrap()
}

#[test]
fn outputs_are_bit_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["amplitude", "--scenario", "halfwave", "--w-grid", "line:1,0:3,0.5:7"];
    assert_eq!(csv_bytes(a.path(), &args, "amplitude.csv"), csv_bytes(b.path(), &args, "amplitude.csv"));
    let args = ["oracle", "--scenario", "halfwave", "--quantity", "trace_kernel"];
    assert_eq!(csv_bytes(a.path(), &args, "oracle.csv"), csv_bytes(b.path(), &args, "oracle.csv"));
    assert_eq!(fs::read(a.path().join("checks.csv")).unwrap(), fs::read(b.path().join("checks.csv")).unwrap());
}

fn first_b0(args: &[&str]) -> f64 {
    let o = run(args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == "re_b0").unwrap();
    row[i].parse().unwrap()
}

#[test]
fn prefactor_flag_switches_the_normalization() {
    let derived = first_b0(&["amplitude", "--scenario", "rotation", "--w-grid", "points:1,0.5"]);
    let paper = first_b0(&["amplitude", "--scenario", "rotation", "--w-grid", "points:1,0.5", "--prefactor", "paper"]);
    assert!((derived / paper - 2.0 * std::f64::consts::PI).abs() < 1e-9);
    let alpha = first_b0(&["amplitude", "--scenario", "rotation", "--param", "alpha=0.5235987755982988", "--w-grid", "points:1,0.5"]);
    assert!((alpha - 1.0 / std::f64::consts::PI).abs() < 1e-9);
}

#[test]
fn trace_prints_traced_lagrangian_samples() {
    let o = run(&["trace", "--scenario", "halfwave"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let samples: Vec<&str> = text.lines().skip_while(|l| !l.starts_with("# i!")).skip(1).collect();
    assert!(!samples.is_empty());
    // half-wave trace: |x − x′| = t with p = p′
    for s in samples {
        let v: Vec<f64> = s.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(((v[0] - v[2]).abs() - 1.0).abs() < 1e-8, "{s}");
        assert!((v[1] - v[3]).abs() < 1e-8 * v[1].abs().max(1.0), "{s}");
    }
}
