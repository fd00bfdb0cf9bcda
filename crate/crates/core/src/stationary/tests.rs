use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_3, FRAC_PI_4, FRAC_PI_6, PI};

use num_complex::Complex64;

use super::*;
use crate::geom::CleanOptions;
use crate::phase::{solve_critical_set, Amplitude, CriticalOptions};
use crate::trace::{
    check_condition_clean, lambda_xx_samples, restrict_phase_and_amplitude, trace_lagrangian, EmbeddingChart,
    IntersectionOptions, ParametrizedLagrangian, RestrictedPhase,
};

const ROTATION: &str = "(x[1]-xp[1]*cos($alpha)+yp[1]*sin($alpha))*th[1] + (y[1]-xp[1]*sin($alpha)-yp[1]*cos($alpha))*th[2]";
const HALFWAVE: &str = "(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2] + $t*norm(th)";
const FIBERPAIR: &str = "x[1]*th[1] + y[1]*th[3] - xp[1]*th[2] - yp[1]*th[4]";
const PDO: &str = "(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2]";
const BUMP: &str = "((1 - th[3]^2 - th[4]^2 + abs(1 - th[3]^2 - th[4]^2))/2)^3";

fn embedding() -> EmbeddingChart {
    EmbeddingChart::new(2, 1).unwrap()
}

fn full_phase(text: &str, n_theta: usize, params: &[(&str, f64)], domain: &[&str]) -> PhaseFunction {
    let l = embedding().phase_layout(n_theta);
    let mut e = Expression::parse(text, &l).unwrap();
    for (k, v) in params {
        e = e.with_param(k, *v);
    }
    let dom = domain.iter().map(|d| Expression::parse(d, &l).unwrap()).collect();
    PhaseFunction::new(e, &["x", "y"], &["xp", "yp"], "th", dom).unwrap()
}

struct Setup {
    restricted: RestrictedPhase,
    crit: CriticalManifold,
}

fn setup(phase: &PhaseFunction) -> Setup {
    let (restricted, _) = restrict_phase_and_amplitude(phase, &[], &embedding()).unwrap();
    let crit = solve_critical_set(&restricted.phase, &CriticalOptions::default()).unwrap();
    Setup { restricted, crit }
}

fn traced(phase: &PhaseFunction) -> TracedLagrangian {
    let crit = solve_critical_set(phase, &CriticalOptions::default()).unwrap();
    let lag = ParametrizedLagrangian::from_phase(phase, &crit, &embedding()).unwrap();
    let lxx = lambda_xx_samples(&lag, &IntersectionOptions::default()).unwrap();
    let c1 = check_condition_clean(&lag, &lxx, &CleanOptions::default()).unwrap();
    trace_lagrangian(&lag, &lxx, c1.dim_lambda_xx.unwrap()).unwrap()
}

fn problem(s: &Setup, chart: &CanonicalChart, mode: PrefactorMode) -> StationaryProblem {
    let split = compute_theta_splitting(&s.restricted.phase, &s.crit, 0).unwrap();
    let opts = StationaryOptions { prefactor: mode, ..Default::default() };
    StationaryProblem::new(&s.restricted.phase, &s.crit, chart, split, 2, opts).unwrap()
}

fn one(s: &Setup) -> Amplitude {
    Amplitude::real(Expression::constant(1.0, s.restricted.phase.layout())).unwrap()
}

fn halfwave_chart(t: f64) -> CanonicalChart {
    let s = Expression::parse("-w[2]*w[1] + $t*abs(w[1])", &CanonicalChart::w_layout(1)).unwrap().with_param("t", t);
    CanonicalChart::new(1, &[], &[1]).unwrap().with_generating_function(s).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn chart_examples() {
    let rot = full_phase(ROTATION, 2, &[("alpha", FRAC_PI_4)], &[]);
    let fit = fit_canonical_chart(&traced(&rot), &CanonicalChart::new(1, &[], &[]).unwrap()).unwrap();
    assert!(fit.min_singular > 0.1 && fit.canonical_residual.is_none());

    let hw = traced(&full_phase(HALFWAVE, 2, &[("t", 1.0)], &[]));
    let fit = fit_canonical_chart(&hw, &halfwave_chart(1.0)).unwrap();
    assert!(fit.canonical_residual.unwrap() < 1e-10 && fit.euler_residual.unwrap() < 1e-12);
    let err = fit_canonical_chart(&hw, &CanonicalChart::new(1, &[1], &[1]).unwrap()).unwrap_err();
    assert!(matches!(err, StationaryError::NotAChart { rank: 1, expected: 2, .. }), "{err}");
    let wrong = Expression::parse("w[2]*w[1] + abs(w[1])", &CanonicalChart::w_layout(1)).unwrap();
    let chart = CanonicalChart::new(1, &[], &[1]).unwrap().with_generating_function(wrong).unwrap();
    assert!(matches!(fit_canonical_chart(&hw, &chart), Err(StationaryError::CanonicalEquations { .. })));
}

#[test]
fn chart_coordinates() {
    let c = CanonicalChart::new(2, &[2], &[1]).unwrap();
    assert_eq!(c.w_positions(), [2, 1, 4, 7]);
    assert_eq!(c.w_names(), ["p1", "x2", "xp1", "pp2"]);
    assert_eq!(c.scale(&[1.0, 2.0, 3.0, 4.0], 2.0), [2.0, 2.0, 3.0, 8.0]);
    assert_eq!((c.bar_i(), c.bar_ip()), (alloc::vec![0], alloc::vec![1]));
    assert!(CanonicalChart::new(1, &[2], &[]).is_err());
}

#[test]
fn rotation_stationary_point_and_amplitude() {
    for alpha in [FRAC_PI_6, FRAC_PI_4, FRAC_PI_3] {
        let s = setup(&full_phase(ROTATION, 2, &[("alpha", alpha)], &[]));
        let chart = CanonicalChart::new(1, &[], &[]).unwrap();
        let p = problem(&s, &chart, PrefactorMode::Derived);
        assert_eq!(p.splitting().q, DMatrix::identity(2, 2));
        let (sa, ca) = (libm::sin(alpha), libm::cos(alpha));
        let w = [1.0, ca];
        let st = p.find_stationary_point(&w, &[], None, None).unwrap();
        let expect = [0.0, 0.0, 1.0, 0.0];
        for (a, b) in st.point.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{:?}", st.point);
        }
        assert!(rel(st.det, sa * sa) < 1e-12);
        assert_eq!(st.signature, 0);
        assert!(st.gradient_norm < 1e-10);
        assert!(p.generating_function_value(&w, &st).unwrap().abs() < 1e-12);
        let b = p.leading_amplitude(&w, &one(&s)).unwrap();
        let exact = 1.0 / (2.0 * PI * sa);
        assert!((b.b0 - exact).norm() < 1e-9 * exact);
        let paper = problem(&s, &chart, PrefactorMode::Paper).leading_amplitude(&w, &one(&s)).unwrap();
        assert!(rel(paper.b0.re, exact / (2.0 * PI)) < 1e-9);
        // 0-homogeneous along the conic ray
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&l| (l, p.leading_amplitude(&chart.scale(&w, l), &one(&s)).unwrap().b0.norm()))
            .collect();
        assert!(log_log_slope(&pts).abs() < 0.02);
    }
}

#[test]
fn halfwave_hessian_generating_function_and_amplitude() {
    let t = 1.0;
    let s = setup(&full_phase(HALFWAVE, 2, &[("t", t)], &[]));
    let chart = halfwave_chart(t);
    let p = problem(&s, &chart, PrefactorMode::Derived);
    let st = p.find_stationary_point(&[1.0, 0.0], &[], None, None).unwrap();
    for (a, b) in st.point.iter().zip([-1.0, 1.0, 0.0]) {
        assert!((a - b).abs() < 1e-12, "{:?}", st.point);
    }
    let h = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, t]);
    assert!((&st.hessian - h).norm() < 1e-12);
    assert!((st.det + t).abs() < 1e-12);
    assert_eq!(st.signature, 1);
    for w in [[1.0, 0.0], [-2.0, 0.3], [0.5, -1.2]] {
        let st = p.find_stationary_point(&w, &[], None, None).unwrap();
        let sv = p.generating_function_value(&w, &st).unwrap();
        assert!((sv - (-w[1] * w[0] + t * w[0].abs())).abs() < 1e-10);
        let s2 = p.generating_function_value(&chart.scale(&w, 2.0), &p.find_stationary_point(&chart.scale(&w, 2.0), &[], None, None).unwrap()).unwrap();
        assert!((s2 - 2.0 * sv).abs() < 1e-10);
        let b = p.leading_amplitude(&w, &one(&s)).unwrap().b0;
        let expect = Complex64::from_polar(libm::sqrt(w[0].abs() / t) / (2.0 * PI), FRAC_PI_4);
        assert!((b - expect).norm() < 1e-10);
    }
    let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|&l| (l, p.leading_amplitude(&chart.scale(&[1.0, 0.3], l), &one(&s)).unwrap().b0.norm()))
        .collect();
    assert!((log_log_slope(&pts) - 0.5).abs() < 0.02);
}

#[test]
fn user_generating_function_mismatch_is_reported() {
    let s = setup(&full_phase(HALFWAVE, 2, &[("t", 1.0)], &[]));
    let wrong = Expression::parse("-w[2]*w[1] + 2*abs(w[1])", &CanonicalChart::w_layout(1)).unwrap();
    let chart = CanonicalChart::new(1, &[], &[1]).unwrap().with_generating_function(wrong).unwrap();
    let p = problem(&s, &chart, PrefactorMode::Derived);
    let st = p.find_stationary_point(&[1.0, 0.0], &[], None, Some(1.0)).unwrap();
    let err = p.generating_function_value(&[1.0, 0.0], &st).unwrap_err();
    assert!(matches!(err, StationaryError::GeneratingMismatch { user, computed, .. } if user == 2.0 && (computed - 1.0).abs() < 1e-12));
}

fn fiberpair() -> PhaseFunction {
    full_phase(FIBERPAIR, 4, &[], &["0.8*norm(th[1..2]) - norm(th[3..4])"])
}

#[test]
fn fiberpair_splitting_fiber_and_amplitude() {
    let s = setup(&fiberpair());
    let chart = CanonicalChart::new(1, &[], &[]).unwrap();
    let p = problem(&s, &chart, PrefactorMode::Derived);
    assert_eq!(p.splitting().q, DMatrix::identity(4, 4));
    assert_eq!(p.excess(), 2);
    let w = [1.0, 1.0];
    let st = p.find_stationary_point(&w, &[0.1, -0.2], None, None).unwrap();
    for (a, b) in st.point.iter().zip([0.0, 0.0, 1.0, 1.0]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((st.det - 1.0).abs() < 1e-12 && st.signature == 0);
    let tr = p.fiber_trace(&w).unwrap();
    let r = 0.8 * libm::sqrt(2.0);
    assert!(rel(tr.diameter, 2.0 * r) < 1e-6, "{} {:?} {:?}", tr.diameter, tr.extent, tr.center.theta_dd);
    assert!(tr.max_theta_dd <= r * (1.0 + 1e-6));
    let bump = Amplitude::real(Expression::parse(BUMP, s.restricted.phase.layout()).unwrap()).unwrap();
    let b = p.leading_amplitude(&w, &bump).unwrap();
    let exact = FRAC_PI_4 / (4.0 * PI * PI);
    assert!(rel(b.b0.re, exact) < 1e-6 && b.b0.im.abs() < 1e-9 * exact, "{:?}", b.b0);
    // constant amplitude integrates to the fiber area
    let area = p.leading_amplitude(&w, &one(&s)).unwrap();
    assert!(rel(area.fiber_integral.re, PI * r * r) < 1e-6);
}

#[test]
fn pdo_fiber_is_unbounded() {
    let s = setup(&full_phase(PDO, 2, &[], &[]));
    let split = compute_theta_splitting(&s.restricted.phase, &s.crit, 0).unwrap();
    assert_eq!(split.excess, 1);
    assert!((split.q[(1, 1)].abs() - 1.0).abs() < 1e-12);
    let chart = CanonicalChart::new(1, &[1], &[]).unwrap();
    let p = StationaryProblem::new(&s.restricted.phase, &s.crit, &chart, split, 2, StationaryOptions::default()).unwrap();
    let err = p.fiber_trace(&[0.2, 1.0]).unwrap_err();
    assert!(matches!(err, StationaryError::UnboundedFiber { .. }), "{err}");
}

#[test]
fn prefactor_exponents() {
    assert_eq!(PrefactorMode::Derived.exponent(2, 2, 0), -1.0);
    assert_eq!(PrefactorMode::Paper.exponent(2, 2, 0), -2.0);
    assert_eq!(PrefactorMode::Derived.exponent(2, 4, 2), PrefactorMode::Paper.exponent(2, 4, 2));
    assert_eq!(PrefactorMode::from_name("paper"), Some(PrefactorMode::Paper));
}
