use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_4;

use super::*;

fn chart() -> EmbeddingChart {
    EmbeddingChart::new(2, 1).unwrap()
}

fn exprs(v: &[&str], params: &[(&str, f64)]) -> Vec<Expression> {
    let l = chart().cotangent_layout();
    v.iter()
        .map(|t| {
            let mut e = Expression::parse(t, &l).unwrap();
            for (k, x) in params {
                e = e.with_param(k, *x);
            }
            e
        })
        .collect()
}

fn rotation(alpha: f64) -> CanonicalMap {
    let p = [("alpha", alpha)];
    lift_point_transformation(
        &chart(),
        exprs(&["x[1]*cos($alpha) - y[1]*sin($alpha)", "x[1]*sin($alpha) + y[1]*cos($alpha)"], &p),
        exprs(&["x[1]*cos($alpha) + y[1]*sin($alpha)", "-x[1]*sin($alpha) + y[1]*cos($alpha)"], &p),
        Vec::new(),
    )
    .unwrap()
}

fn shift(a: f64, b: f64) -> CanonicalMap {
    let p = [("a", a), ("b", b)];
    lift_point_transformation(&chart(), exprs(&["x[1] + $a", "y[1] + $b"], &p), exprs(&["x[1] - $a", "y[1] - $b"], &p), Vec::new())
        .unwrap()
}

const CONE: &str = "0.8*abs(p[1]) - abs(q[1])";

fn parabola() -> CanonicalMap {
    lift_point_transformation(&chart(), exprs(&["x[1]", "y[1] + x[1]^2"], &[]), exprs(&["x[1]", "y[1] - x[1]^2"], &[]), exprs(&[CONE], &[]))
        .unwrap()
}

fn geodesic_flow(t: f64) -> CanonicalMap {
    let fwd = ["x[1] + $t*p[1]/sqrt(p[1]^2 + q[1]^2)", "y[1] + $t*q[1]/sqrt(p[1]^2 + q[1]^2)", "p[1]", "q[1]"];
    let inv = ["x[1] - $t*p[1]/sqrt(p[1]^2 + q[1]^2)", "y[1] - $t*q[1]/sqrt(p[1]^2 + q[1]^2)", "p[1]", "q[1]"];
    CanonicalMap::parse(&chart(), &fwd, &inv, &[], &[("t", t)]).unwrap()
}

fn at(g: &CanonicalMap, z: [f64; 4]) -> Vec<f64> {
    g.apply(&z).unwrap()
}

#[test]
fn lifts_of_point_transformations() {
    let (s, c) = (libm::sin(0.3), libm::cos(0.3));
    let g = rotation(0.3);
    let w = at(&g, [1.0, 2.0, 3.0, -1.0]);
    let expect = [c - 2.0 * s, s + 2.0 * c, 3.0 * c + s, 3.0 * s - c];
    for (a, b) in w.iter().zip(expect) {
        assert!((a - b).abs() < 1e-14, "{w:?}");
    }
    assert_eq!(at(&shift(1.0, 0.5), [0.2, 0.3, 0.7, -0.4]), [1.2, 0.8, 0.7, -0.4]);
    // (x, y + x²) lifts to (x, y + x², p − 2xq, q)
    let w = at(&parabola(), [0.5, 0.1, 1.0, 0.3]);
    for (a, b) in w.iter().zip([0.5, 0.35, 1.0 - 2.0 * 0.5 * 0.3, 0.3]) {
        assert!((a - b).abs() < 1e-14, "{w:?}");
    }
    for g in [rotation(0.3), shift(1.0, 0.5), parabola()] {
        let rep = validate_canonical(&g, &sample_cotangent(&g, 30, 1)).unwrap();
        assert!(rep.symplectic_residual < 1e-12 && rep.passed(), "{rep:?}");
    }
}

#[test]
fn lift_rejects_bad_inverse_and_covector_dependence() {
    let err = lift_point_transformation(&chart(), exprs(&["x[1] + 1", "y[1]"], &[]), exprs(&["x[1] + 1", "y[1]"], &[]), Vec::new());
    assert!(matches!(err, Err(CanonicalError::InverseMismatch { .. })));
    let err = lift_point_transformation(&chart(), exprs(&["x[1] + p[1]", "y[1]"], &[]), exprs(&["x[1]", "y[1]"], &[]), Vec::new());
    assert!(matches!(err, Err(CanonicalError::Dimension(_))));
}

#[test]
fn validation_detects_non_canonical_maps() {
    let g = CanonicalMap::parse(&chart(), &["x[1]", "y[1]", "p[1]", "2*q[1]"], &["x[1]", "y[1]", "p[1]", "q[1]/2"], &[], &[]).unwrap();
    let rep = validate_canonical(&g, &sample_cotangent(&g, 10, 2)).unwrap();
    assert!(!rep.canonical());
    assert!((rep.symplectic_residual - 1.0).abs() < 1e-12);
    // ω(∂y, ∂q) doubles
    assert_eq!(rep.worst_frame, Some((1, 3)));
    let geo = geodesic_flow(1.0);
    let rep = validate_canonical(&geo, &sample_cotangent(&geo, 30, 3)).unwrap();
    assert!(rep.symplectic_residual < 1e-8 && rep.passed(), "{rep:?}");
}

#[test]
fn graphs_are_lagrangian() {
    let id = CanonicalMap::parse(&chart(), &["x[1]", "y[1]", "p[1]", "q[1]"], &["x[1]", "y[1]", "p[1]", "q[1]"], &[], &[]).unwrap();
    let gr = graph_lagrangian(&id, &sample_cotangent(&id, 10, 4)).unwrap();
    assert!(gr.isotropy < 1e-15);
    for s in &gr.samples {
        assert_eq!(s[..4], s[4..]);
    }
    let rot = rotation(FRAC_PI_4);
    let gr = graph_lagrangian(&rot, &sample_cotangent(&rot, 10, 5)).unwrap();
    assert!(gr.isotropy < 1e-14);
    assert_eq!(gr.submanifold.tangent_basis(&gr.samples[0]).unwrap().ncols(), 4);
    let geo = geodesic_flow(1.0);
    assert!(graph_lagrangian(&geo, &sample_cotangent(&geo, 20, 6)).unwrap().isotropy < 1e-8);
    // p ↦ −p with the base fixed reverses ω
    let flip = CanonicalMap::parse(&chart(), &["x[1]", "y[1]", "-p[1]", "-q[1]"], &["x[1]", "y[1]", "-p[1]", "-q[1]"], &[], &[]).unwrap();
    assert!(matches!(graph_lagrangian(&flip, &sample_cotangent(&flip, 5, 7)), Err(CanonicalError::NotLagrangian { .. })));
}

#[test]
fn corollary_conditions_agree_with_the_graph() {
    let opts = CorollaryOptions::default();
    let rot = check_corollary_conditions(&rotation(FRAC_PI_4), &opts).unwrap();
    assert!(rot.passed() && rot.agree(), "{rot:?}");
    assert_eq!(rot.condition1.as_ref().unwrap().intersection_dim, Some(2));
    assert!((rot.condition2_margin - libm::sin(FRAC_PI_4)).abs() < 1e-6, "{}", rot.condition2_margin);

    let sh = check_corollary_conditions(&shift(1.0, 0.0), &opts).unwrap();
    assert!(sh.condition1_passed && !sh.condition2_passed && sh.agree(), "{sh:?}");
    assert!(sh.condition2_margin < 1e-12);

    let geo = check_corollary_conditions(&geodesic_flow(1.0), &opts).unwrap();
    assert!(geo.passed() && geo.agree(), "{geo:?}");
    assert!((geo.condition2_margin - 1.0).abs() < 1e-9);

    let par = check_corollary_conditions(&parabola(), &opts).unwrap();
    assert!(!par.condition1_passed && par.condition2_passed && par.agree(), "{par:?}");
    assert!(par.condition2_margin.is_infinite());

    let id = CanonicalMap::parse(&chart(), &["x[1]", "y[1]", "p[1]", "q[1]"], &["x[1]", "y[1]", "p[1]", "q[1]"], &[], &[]).unwrap();
    let idr = check_corollary_conditions(&id, &opts).unwrap();
    assert!(!idr.condition2_passed && idr.agree() && idr.graph_lemma_violation().is_none());
}

#[test]
fn order_bound_is_strict() {
    let c = chart();
    assert!(check_order_bound(-2.0, &c));
    assert!(!check_order_bound(-1.0, &c));
    assert!(!check_order_bound(0.0, &c));
}

#[test]
fn lift_phase_reproduces_the_rotation_phase() {
    let c = chart();
    let p = [("alpha", 0.3)];
    let psi = exprs(&["x[1]*cos($alpha) - y[1]*sin($alpha)", "x[1]*sin($alpha) + y[1]*cos($alpha)"], &p);
    let ph = lift_phase(&c, &psi, &[]).unwrap();
    let l = c.phase_layout(2);
    let expect = Expression::parse(
        "(x[1]-xp[1]*cos($alpha)+yp[1]*sin($alpha))*th[1] + (y[1]-xp[1]*sin($alpha)-yp[1]*cos($alpha))*th[2]",
        &l,
    )
    .unwrap()
    .with_param("alpha", 0.3);
    let pt = [0.3, -0.2, 1.1, 0.4, 0.7, -1.3];
    assert!((ph.phi().evaluate(&pt).unwrap() - expect.evaluate(&pt).unwrap()).abs() < 1e-14);
    // the cone is tested at the source covector dψᵀθ = (θ₁ + 2x′θ₂, θ₂)
    let par = lift_phase(&c, &exprs(&["x[1]", "y[1] + x[1]^2"], &[]), &exprs(&[CONE], &[])).unwrap();
    assert!(par.in_domain(&[0.0, 0.0, 0.5, 0.0, 1.0, 0.5]));
    assert!(!par.in_domain(&[0.0, 0.0, -0.5, 0.0, 1.0, 0.5]));
}
