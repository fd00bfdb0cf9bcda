use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_4;

use super::*;
use crate::expr::{BlockLayout, Expression};

fn trace_layout(n_theta: usize) -> Arc<BlockLayout> {
    Arc::new(BlockLayout::new(&[("x", 1), ("xp", 1), ("th", n_theta)]).unwrap())
}

fn phase(text: &str, n_theta: usize, params: &[(&str, f64)], domain: &[&str]) -> PhaseFunction {
    let l = trace_layout(n_theta);
    let mut e = Expression::parse(text, &l).unwrap();
    for (k, v) in params {
        e = e.with_param(k, *v);
    }
    let dom = domain.iter().map(|d| Expression::parse(d, &l).unwrap()).collect();
    PhaseFunction::new(e, &["x"], &["xp"], "th", dom).unwrap()
}

fn rotation() -> PhaseFunction {
    phase("(x[1]-xp[1]*cos($alpha))*th[1] - xp[1]*sin($alpha)*th[2]", 2, &[("alpha", FRAC_PI_4)], &[])
}

fn halfwave() -> PhaseFunction {
    phase("(x[1]-xp[1])*th[1] + $t*norm(th)", 2, &[("t", 1.0)], &[])
}

fn fiberpair() -> PhaseFunction {
    phase("x[1]*th[1] - xp[1]*th[2]", 4, &[], &["0.8*norm(th[1..2]) - norm(th[3..4])"])
}

#[test]
fn rotation_critical_set_is_the_origin_fiber() {
    let p = rotation();
    let c = solve_critical_set(&p, &CriticalOptions::default()).unwrap();
    assert_eq!((c.dim, c.excess, c.rank_of_matrix), (2, 0, 2));
    assert!(c.points.len() >= 20);
    for q in &c.points {
        assert!(q[0].abs() < 1e-10 && q[1].abs() < 1e-10);
        assert!((p.theta_norm(q) - 1.0).abs() < 1e-12);
    }
    let ex = excess_of(&p, &c, &CleanOptions::default()).unwrap();
    assert_eq!((ex.rank_based, ex.dim_based), (0, 0));
}

#[test]
fn halfwave_critical_set_is_the_shifted_diagonal() {
    let p = halfwave();
    let c = solve_critical_set(&p, &CriticalOptions::default()).unwrap();
    assert_eq!((c.dim, c.excess), (2, 0));
    for q in &c.points {
        assert!(q[3].abs() < 1e-10);
        assert!((q[0] - q[1] + q[2].signum()).abs() < 1e-10);
    }
    let ex = excess_of(&p, &c, &CleanOptions::default()).unwrap();
    assert_eq!(ex.excess, 0);
}

#[test]
fn fiberpair_has_excess_two() {
    let p = fiberpair();
    let c = solve_critical_set(&p, &CriticalOptions::default()).unwrap();
    assert_eq!((c.dim, c.excess, c.rank_of_matrix), (4, 2, 2));
    let ex = excess_of(&p, &c, &CleanOptions::default()).unwrap();
    assert_eq!((ex.rank_based, ex.dim_based, ex.sampled_dim), (2, 2, 4));
    for (q, f) in c.points.iter().zip(&c.fibration_frames) {
        assert!(p.in_domain(q));
        assert_eq!(f.ncols(), 2);
        // fibers are the (th3, th4) slices
        for j in 0..2 {
            assert!(f.column(j).rows(0, 4).norm() < 1e-10);
        }
    }
    let lag = lagrangian_samples(&p, &c, 1e-8).unwrap();
    assert!(lag.isotropy < 1e-7);
    for pt in &lag.points {
        assert!(pt[0].abs() < 1e-10 && pt[2].abs() < 1e-10);
    }
}

#[test]
fn pdo_restriction_has_excess_one() {
    let p = phase("(x[1]-xp[1])*th[1]", 2, &[], &[]);
    let c = solve_critical_set(&p, &CriticalOptions::default()).unwrap();
    assert_eq!((c.dim, c.excess), (3, 1));
    let m = p.theta_matrix(&[0.2, 0.2, 1.0, 0.5]).unwrap();
    assert_eq!(m, DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
    let ex = excess_of(&p, &c, &CleanOptions::default()).unwrap();
    assert_eq!((ex.rank_based, ex.dim_based), (1, 1));
    // pure-q direction: both covectors vanish
    assert!(matches!(p.parametrize(&[0.3, 0.3, 0.0, 1.0], 1e-10), Err(PhaseError::ZeroSection { .. })));
}

#[test]
fn parametrize_examples() {
    let a = FRAC_PI_4;
    let img = rotation().parametrize(&[0.0, 0.0, 1.0, 0.0], 1e-12).unwrap();
    let expected = [0.0, 1.0, 0.0, libm::cos(a)];
    for (u, v) in img.iter().zip(expected) {
        assert!((u - v).abs() < 1e-15);
    }
    let xp = 0.4;
    let img = halfwave().parametrize(&[xp - 1.0, xp, 1.0, 0.0], 1e-12).unwrap();
    for (u, v) in img.iter().zip([xp - 1.0, 1.0, xp, 1.0]) {
        assert!((u - v).abs() < 1e-15);
    }
    assert!(matches!(rotation().parametrize(&[0.5, 0.0, 1.0, 0.0], 1e-10), Err(PhaseError::NotCritical { .. })));
}

#[test]
fn rotation_lagrangian_samples() {
    let p = rotation();
    let c = solve_critical_set(&p, &CriticalOptions::default()).unwrap();
    let lag = lagrangian_samples(&p, &c, 1e-8).unwrap();
    assert!(lag.isotropy < 1e-7);
    let (ca, sa) = (libm::cos(FRAC_PI_4), libm::sin(FRAC_PI_4));
    for (pt, src) in lag.points.iter().zip(&lag.sources) {
        let (pp, q) = (src[2], src[3]);
        assert!((pt[3] - (pp * ca + q * sa)).abs() < 1e-12);
        assert!(pt[0].abs() < 1e-10 && pt[2].abs() < 1e-10);
    }
    assert!(lag.fiber_frames.iter().all(|f| f.ncols() == 0));
}

#[test]
fn gamma_commutes_with_theta_scaling() {
    let p = halfwave();
    let c = [0.1 - 1.0, 0.1, 0.6, 0.0];
    let base = p.gamma_at(&c).unwrap();
    for lambda in [0.5, 2.0] {
        let mut s = c;
        s[2] *= lambda;
        s[3] *= lambda;
        let img = p.gamma_at(&s).unwrap();
        assert!((img[0] - base[0]).abs() < 1e-15 && (img[2] - base[2]).abs() < 1e-15);
        assert!((img[1] - lambda * base[1]).abs() < 1e-14 && (img[3] - lambda * base[3]).abs() < 1e-14);
    }
}

#[test]
fn validation_detects_wrong_degree() {
    let samples: Vec<Vec<f64>> = (0..10).map(|k| vec![0.1 * k as f64, -0.2, 1.0, 0.3 + 0.1 * k as f64]).collect();
    let mut ok = halfwave();
    assert!(ok.validate(&samples, 1e-9).unwrap() > 0.0);
    assert!(ok.homogeneity().unwrap().euler_residual < 1e-12);
    let mut bad = phase("th[1]^2 + x[1]*th[2]", 2, &[], &[]);
    assert!(matches!(bad.validate(&samples, 1e-9), Err(PhaseError::NotHomogeneous { .. })));
}

#[test]
fn sphere_grids_are_unit() {
    for n in 1..=5 {
        for d in sphere_grid(n, 17, 3) {
            assert!((crate::linalg::norm(&d) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn restriction_substitutes_zero() {
    let l = Arc::new(BlockLayout::new(&[("x", 1), ("y", 1), ("xp", 1), ("yp", 1), ("th", 2)]).unwrap());
    let phi = Expression::parse("(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2]", &l).unwrap();
    let full = PhaseFunction::new(phi, &["x", "y"], &["xp", "yp"], "th", Vec::new()).unwrap();
    let rl = trace_layout(2);
    let r = full.restrict(&rl, &[0, 2, 4, 5], &[(1, 0.0), (3, 0.0)], &["x"], &["xp"], "th").unwrap();
    assert_eq!(r.phi(), &Expression::parse("(x[1]-xp[1])*th[1]", &rl).unwrap());
}
