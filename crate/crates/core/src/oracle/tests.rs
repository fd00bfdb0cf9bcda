use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

use super::*;
use crate::expr::BlockLayout;
use crate::phase::{solve_critical_set, CriticalOptions};
use crate::stationary::{compute_theta_splitting, CanonicalChart, PrefactorMode, StationaryOptions};
use crate::trace::{restrict_phase_and_amplitude, EmbeddingChart};

fn layout(n_theta: usize) -> Arc<BlockLayout> {
    Arc::new(BlockLayout::new(&[("x", 1), ("th", n_theta)]).unwrap())
}

fn amp(text: &str, l: &Arc<BlockLayout>) -> Amplitude {
    Amplitude::real(Expression::parse(text, l).unwrap()).unwrap()
}

fn integral(phase: &str, a: &str, x: f64, n_theta: usize, spec: &MollifiedIntegralSpec) -> Result<OracleResult, OracleError> {
    let l = layout(n_theta);
    let slots: Vec<usize> = (1..=n_theta).collect();
    let mut fixed = alloc::vec![0.0; 1 + n_theta];
    fixed[0] = x;
    oscillatory_integral(&Expression::parse(phase, &l).unwrap(), &amp(a, &l), &slots, &fixed, spec)
}

#[test]
fn fourier_transform_of_gaussian() {
    let fine = MollifiedIntegralSpec { order: 3, ..MollifiedIntegralSpec::default() }
        .with_epsilons(&[0.01, 0.005, 0.0025, 0.00125])
        .with_nodes(&[2048]);
    for x in [0.0, 0.7, 2.0] {
        let r = integral("x[1]*th[1]", "exp(-th[1]^2/2)", x, 1, &fine).unwrap();
        let exact = libm::sqrt(2.0 * PI) * libm::exp(-x * x / 2.0);
        assert!((r.value - exact).norm() < 1e-8, "x = {x}: {:?}", r.value);
        assert_eq!(r.epsilon_trace.len(), 4);
    }
    // undamped e^{ixθ} is a delta at x = 0
    let r = integral("x[1]*th[1]", "1", 3.0, 1, &MollifiedIntegralSpec::default()).unwrap();
    assert!(r.value.norm() < 1e-4, "{:?}", r);
}

#[test]
fn zero_phase_is_plain_quadrature() {
    let r = integral("0", "exp(-(th[1]^2 + th[2]^2)/2)/(2*pi)", 0.0, 2, &MollifiedIntegralSpec::default()).unwrap();
    assert!((r.value.re - 1.0).abs() < 1e-8 && r.value.im.abs() < 1e-15);
    assert!(r.epsilon_trace.is_empty());
}

#[test]
fn zero_amplitude_gives_zero() {
    let r = integral("x[1]*th[1]", "0", 0.3, 1, &MollifiedIntegralSpec::default()).unwrap();
    assert_eq!(r.value, Complex64::new(0.0, 0.0));
}

#[test]
fn spec_validation() {
    let short = MollifiedIntegralSpec::default().with_radii(&[5.0]);
    assert!(matches!(integral("x[1]*th[1]", "1", 0.0, 1, &short), Err(OracleError::Spec(_))));
    let bad = MollifiedIntegralSpec::default().with_epsilons(&[0.1, 0.2]);
    assert!(bad.validate(1).is_err());
    assert!(MollifiedIntegralSpec { allow_short_radius: true, ..short }.validate(1).is_ok());
}

#[test]
fn linearity_in_the_amplitude() {
    let spec = MollifiedIntegralSpec::default();
    let ph = "x[1]*th[1] + th[1]^2/3";
    let (a, b) = ("exp(-th[1]^2)", "th[1]^2*exp(-th[1]^2/4)");
    let ra = integral(ph, a, 0.4, 1, &spec).unwrap().value;
    let rb = integral(ph, b, 0.4, 1, &spec).unwrap().value;
    let rab = integral(ph, &alloc::format!("2*({a}) - 3*({b})"), 0.4, 1, &spec).unwrap().value;
    assert!((rab - (ra * 2.0 - rb * 3.0)).norm() < 1e-10 * (1.0 + rab.norm()));
}

#[test]
fn theta_rescaling_covariance() {
    // θ = λη maps the damping ε|θ|² to ελ²|η|² and the grid onto itself, so
    // ∫ e^{iφ(x,θ)} a(θ) dθ and λ^N ∫ e^{iφ(x,λη)} a(λη) dη agree to roundoff
    let spec = MollifiedIntegralSpec::default();
    let direct = integral("x[1]*(th[1] + th[2]) + th[1]*th[2]/4", "1/(1 + th[1]^2 + th[2]^2)", 0.5, 2, &spec).unwrap();
    let scaled_spec = MollifiedIntegralSpec {
        epsilons: spec.epsilons.iter().map(|e| 4.0 * e).collect(),
        radii: alloc::vec![spec.radius(0) / 2.0],
        ..spec.clone()
    };
    let scaled =
        integral("2*x[1]*(th[1] + th[2]) + th[1]*th[2]", "4/(1 + 4*th[1]^2 + 4*th[2]^2)", 0.5, 2, &scaled_spec).unwrap();
    assert!((direct.value - scaled.value).norm() < 1e-10 * direct.value.norm(), "{direct:?} {scaled:?}");
}

#[test]
fn halving_epsilon_is_consistent() {
    let spec = MollifiedIntegralSpec::default().with_epsilons(&[0.04, 0.02, 0.01, 0.005]).with_nodes(&[1024]);
    let (ph, a) = ("x[1]*th[1] + th[1]^2/2", "exp(-th[1]^2/2)");
    let r = integral(ph, a, 0.3, 1, &spec).unwrap();
    let h = integral(ph, a, 0.3, 1, &spec.halved()).unwrap();
    assert!((r.value - h.value).norm() <= r.error_estimate.max(1e-12), "{r:?} {h:?}");
}

#[test]
fn richardson_flags_growing_corrections() {
    let trace = alloc::vec![
        (0.4, Complex64::new(1.0, 0.0)),
        (0.2, Complex64::new(2.0, 0.0)),
        (0.1, Complex64::new(-1.0, 0.0)),
        (0.05, Complex64::new(1.0, 0.0)),
    ];
    assert!(matches!(richardson(trace, 2, 0.0), Err(OracleError::Inconclusive { .. })));
    let smooth: Vec<(f64, Complex64)> = [0.4, 0.2, 0.1, 0.05].iter().map(|&e| (e, Complex64::new(2.0 + e - e * e, e))).collect();
    let r = richardson(smooth, 2, 0.0).unwrap();
    assert!((r.value - Complex64::new(2.0, 0.0)).norm() < 1e-12);
}

#[test]
fn plateau_window() {
    assert_eq!(plateau(0.0), 1.0);
    assert_eq!(plateau(0.5), 1.0);
    assert_eq!(plateau(1.0), 0.0);
    assert!((plateau(0.75) - 0.5).abs() < 1e-15);
    assert!(plateau(0.6) > plateau(0.7) && plateau(0.9) > 0.0);
}

const ROTATION: &str = "(x[1]-xp[1]*cos($alpha)+yp[1]*sin($alpha))*th[1] + (y[1]-xp[1]*sin($alpha)-yp[1]*cos($alpha))*th[2]";
const HALFWAVE: &str = "(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2] + $t*norm(th)";

fn restricted(text: &str, param: (&str, f64)) -> RestrictedPhase {
    let chart = EmbeddingChart::new(2, 1).unwrap();
    let l = chart.phase_layout(2);
    let e = Expression::parse(text, &l).unwrap().with_param(param.0, param.1);
    let phase = PhaseFunction::new(e, &["x", "y"], &["xp", "yp"], "th", Vec::new()).unwrap();
    restrict_phase_and_amplitude(&phase, &[], &chart).unwrap().0
}

fn one(r: &RestrictedPhase) -> Amplitude {
    Amplitude::real(Expression::constant(1.0, r.phase.layout())).unwrap()
}

fn small_eps() -> MollifiedIntegralSpec {
    MollifiedIntegralSpec::default().with_epsilons(&[0.004, 0.002, 0.001, 0.0005]).with_nodes(&[256])
}

#[test]
fn rotation_kernel_vanishes_off_the_fixed_point() {
    let r = restricted(ROTATION, ("alpha", FRAC_PI_4));
    let k = trace_kernel_value(&r, &one(&r), &[0.5], &[0.7], &small_eps()).unwrap();
    assert!(k.value.norm() < 1e-6, "{k:?}");
}

fn problem(r: &RestrictedPhase, chart: &CanonicalChart) -> StationaryProblem {
    let crit = solve_critical_set(&r.phase, &CriticalOptions::default()).unwrap();
    let split = compute_theta_splitting(&r.phase, &crit, 0).unwrap();
    let opts = StationaryOptions { prefactor: PrefactorMode::Derived, ..Default::default() };
    StationaryProblem::new(&r.phase, &crit, chart, split, 2, opts).unwrap()
}

#[test]
fn amplitude_oracle_matches_rotation_and_halfwave() {
    let alpha = FRAC_PI_4;
    let r = restricted(ROTATION, ("alpha", alpha));
    let p = problem(&r, &CanonicalChart::new(1, &[], &[]).unwrap());
    let w = [40.0, 40.0 * libm::cos(alpha)];
    let o = amplitude_oracle(&p, &w, &one(&r), &AmplitudeOracleSpec::default()).unwrap();
    let exact = 1.0 / (2.0 * PI * libm::sin(alpha));
    assert!((o.value - exact).norm() < 0.05 * exact, "{o:?}");

    let r = restricted(HALFWAVE, ("t", 1.0));
    let s = Expression::parse("-w[2]*w[1] + abs(w[1])", &CanonicalChart::w_layout(1)).unwrap();
    let chart = CanonicalChart::new(1, &[], &[1]).unwrap().with_generating_function(s).unwrap();
    let p = problem(&r, &chart);
    let o = amplitude_oracle(&p, &[40.0, 0.0], &one(&r), &AmplitudeOracleSpec::default()).unwrap();
    // next-order Hankel correction shifts the phase by 3/(8λ)
    assert!((o.value.arg() - FRAC_PI_4 - 3.0 / 320.0).abs() < 2e-3, "{o:?}");
    assert!((o.value.norm() / (libm::sqrt(40.0) / (2.0 * PI)) - 1.0).abs() < 5e-3, "{o:?}");
}

#[test]
fn halfwave_moves_packets_by_t() {
    let r = restricted(HALFWAVE, ("t", 1.0));
    let crit = solve_critical_set(&r.phase, &CriticalOptions::default()).unwrap();
    let packet = WavePacket { x0: 0.0, p0: 20.0, sigma: 0.3 };
    let grid: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
    let spec = MollifiedIntegralSpec {
        epsilons: alloc::vec![0.004, 0.002, 0.001, 0.0005],
        nodes: alloc::vec![96, 320],
        radii: alloc::vec![20.0, 6.0 / libm::sqrt(0.0005)],
        centers: alloc::vec![20.0, 0.0],
        order: 2,
        allow_short_radius: true,
    };
    let c = wavepacket_operator_check(&r, &one(&r), &packet, &grid, 48, &spec, &crit.points).unwrap();
    let (px, pp) = c.predicted.unwrap();
    assert!((px + 1.0).abs() < 1e-9 && (pp - 20.0).abs() < 1e-9);
    assert!((c.center.unwrap() - px).abs() < 0.05, "{:?}", c.center);
    // the restricted half-wave kernel multiplies |û| by 2π|b₀(p)|² = |p|/2π
    assert!((c.mass_ratio / (20.0 / (2.0 * PI)) - 1.0).abs() < 0.05, "{}", c.mass_ratio);
}


