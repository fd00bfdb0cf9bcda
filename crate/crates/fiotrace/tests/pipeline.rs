mod common;

use std::f64::consts::{FRAC_PI_4, PI};

use common::scenario;
use fiotrace::config::{parse_config, Overrides};
use fiotrace::pipeline::{parse_w_grid, run_amplitude, run_check, run_oracle, OracleQuantity, RunOptions, Verdict};

#[test]
fn rotation_amplitude_is_constant_along_a_line() {
    let cfg = scenario("rotation", &[]);
    let rep = run_check(&cfg, &RunOptions::default()).unwrap();
    let grid = parse_w_grid("line:0.5,0.2:3,2:10", &cfg).unwrap();
    let rows = run_amplitude(&cfg, &rep, &grid, &RunOptions::default()).unwrap();
    assert_eq!(rows.len(), 10);
    let exact = 1.0 / (2.0 * PI * FRAC_PI_4.sin());
    for r in &rows {
        assert!(r.certified);
        assert!((r.result.as_ref().unwrap().b0 - exact).norm() < 1e-6 * exact);
    }
}

#[test]
fn zero_amplitude_gives_zeros() {
    let text = common::builtin_text("halfwave").replace("re = \"1\"", "re = \"0\"");
    let cfg = parse_config(&text, "zero", &Overrides::default()).unwrap();
    let rep = run_check(&cfg, &RunOptions::default()).unwrap();
    assert!(rep.passed());
    let grid = parse_w_grid("ray:w0:1,4", &cfg).unwrap();
    for r in run_amplitude(&cfg, &rep, &grid, &RunOptions::default()).unwrap() {
        assert_eq!(r.result.unwrap().b0.norm(), 0.0);
    }
    for r in run_oracle(&cfg, &rep, OracleQuantity::Amplitude, &[10.0, 20.0], &RunOptions::default()).unwrap() {
        assert_eq!(r.oracle.norm(), 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
    }
}

#[test]
fn halfwave_packets_move_against_the_frequency() {
    let cfg = scenario("halfwave", &[]);
    let rep = run_check(&cfg, &RunOptions::default()).unwrap();
    let rows = run_oracle(&cfg, &rep, OracleQuantity::Wavepacket, &[20.0, -20.0], &RunOptions::default()).unwrap();
    for r in rows {
        let expected = -r.sweep.signum();
        assert!((r.oracle.re - expected).abs() < 0.05, "{r:?}");
        assert_eq!(r.verdict, Verdict::Pass);
    }
}

#[test]
fn per_point_failures_stay_in_their_rows() {
    let cfg = scenario("halfwave", &[]);
    let rep = run_check(&cfg, &RunOptions::default()).unwrap();
    // p = 0 lies on the zero section, outside the conic chart
    let grid = parse_w_grid("points:1,0.3;0,0.3;2,0.3", &cfg).unwrap();
    let rows = run_amplitude(&cfg, &rep, &grid, &RunOptions::default()).unwrap();
    assert!(rows[0].result.is_ok() && rows[2].result.is_ok());
    assert!(rows[1].result.is_err());
}

#[test]
fn w_grid_syntax_errors_are_reported() {
    let cfg = scenario("rotation", &[]);
    assert!(parse_w_grid("ray:1:2", &cfg).is_err());
    assert!(parse_w_grid("line:1,0:2,0:1", &cfg).is_err());
    assert!(parse_w_grid("spiral:1,0", &cfg).is_err());
    assert_eq!(parse_w_grid("ray:1,2:1,2", &cfg).unwrap(), vec![vec![1.0, 2.0], vec![2.0, 4.0]]);
}
