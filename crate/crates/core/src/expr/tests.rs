use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::*;

fn layout() -> Arc<BlockLayout> {
    Arc::new(BlockLayout::new(&[("x", 1), ("y", 1), ("xp", 1), ("yp", 1), ("th", 2)]).unwrap())
}

fn th_layout() -> Arc<BlockLayout> {
    Arc::new(BlockLayout::new(&[("th", 2)]).unwrap())
}

#[test]
fn layout_rejects_empty_and_duplicate_blocks() {
    assert!(BlockLayout::new(&[("th", 0)]).is_err());
    assert!(BlockLayout::new(&[("x", 1), ("x", 2)]).is_err());
    let l = layout();
    assert_eq!(l.total_dim(), 6);
    assert_eq!(l.slot("th", 2), Some(5));
    assert_eq!(l.slot("th", 3), None);
    assert_eq!(l.locate(4).map(|(b, i)| (b.name.as_str(), i)), Some(("th", 1)));
}

#[test]
fn parses_rotation_style_phase() {
    let l = layout();
    let e = Expression::parse("(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2]", &l).unwrap();
    let mut slots = Vec::new();
    e.node().for_each_slot(&mut |s| slots.push(s));
    slots.sort_unstable();
    slots.dedup();
    assert_eq!(slots.len(), 6);
}

#[test]
fn syntax_error_reports_position() {
    let l = layout();
    match Expression::parse("sin(", &l) {
        Err(ExprError::Syntax { position, .. }) => assert_eq!(position, 5),
        other => panic!("unexpected {other:?}"),
    }
    match Expression::parse("th[3]", &l) {
        Err(ExprError::IndexOutOfRange { index: 3, dim: 2, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(Expression::parse("z[1]", &l), Err(ExprError::UnknownIdentifier { .. })));
    assert!(Expression::parse("x[1]^0.5", &l).is_err());
    assert!(Expression::parse("x[1] x[1]", &l).is_err());
}

#[test]
fn evaluates_examples() {
    let l = layout();
    let e = Expression::parse("(x[1]-xp[1])*th[1]", &l).unwrap();
    assert_eq!(e.evaluate(&[2.0, 0.0, 1.0, 0.0, 3.0, 0.0]).unwrap(), 3.0);
    let n = Expression::parse("norm(th)", &l).unwrap();
    assert_eq!(n.evaluate(&[0.0, 0.0, 0.0, 0.0, 3.0, 4.0]).unwrap(), 5.0);
    let s = Expression::parse("sgn(th[1])", &l).unwrap();
    match s.evaluate(&[1.0, 1.0, 1.0, 1.0, 0.0, 1.0]) {
        Err(EvalError::SingularLocus { subexpression, .. }) => assert_eq!(subexpression, "sgn(th[1])"),
        other => panic!("unexpected {other:?}"),
    }
    let d = Expression::parse("1/(x[1]-xp[1])", &l).unwrap();
    assert!(matches!(d.evaluate(&[1.0; 6]), Err(EvalError::SingularLocus { .. })));
    assert!(matches!(e.evaluate(&[1.0; 3]), Err(EvalError::DimensionMismatch { .. })));
}

#[test]
fn parameters_are_late_bound() {
    let l = layout();
    let e = Expression::parse("$t*norm(th) + pi", &l).unwrap();
    let p = [0.0, 0.0, 0.0, 0.0, 3.0, 4.0];
    assert!(matches!(e.evaluate(&p), Err(EvalError::UnboundParameter(_))));
    let bound = e.clone().with_param("t", 2.0);
    assert_eq!(bound.evaluate(&p).unwrap(), 10.0 + core::f64::consts::PI);
    assert_eq!(bound.evaluate_with(&p, &[("t", 1.0)]).unwrap(), 5.0 + core::f64::consts::PI);
    assert!(e.compile().is_err());
    assert_eq!(bound.compile().unwrap().eval(&p).unwrap(), bound.evaluate(&p).unwrap());
}

#[test]
fn derivative_examples() {
    let l = layout();
    let n = Expression::parse("norm(th)", &l).unwrap();
    let th1 = l.slot("th", 1).unwrap();
    assert_eq!(n.differentiate(th1).to_string(), "th[1]/norm(th)");
    let e = Expression::parse("(x[1]-xp[1])*th[1]", &l).unwrap();
    assert_eq!(e.differentiate(l.slot("x", 1).unwrap()).to_string(), "th[1]");

    // Second derivative of |θ| along θ₁ at (0, 1): central difference oracle.
    let lt = th_layout();
    let n = Expression::parse("norm(th)", &lt).unwrap();
    let d2 = n.differentiate(0).differentiate(0);
    let exact = d2.evaluate(&[0.0, 1.0]).unwrap();
    let h = 1e-5;
    let f = |t: f64| libm::sqrt(t * t + 1.0);
    let fd = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
    assert!((exact - 1.0).abs() < 1e-12);
    assert!((fd - exact).abs() < 1e-5, "fd {fd}");
}

#[test]
fn derivatives_match_finite_differences() {
    let l = layout();
    let texts = [
        "(x[1]-xp[1]*cos($a)+yp[1]*sin($a))*th[1] + (y[1]-xp[1]*sin($a)-yp[1]*cos($a))*th[2]",
        "(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2] + $a*norm(th)",
        "exp(-x[1]^2/2)*sqrt(th[1]^2 + 3) - abs(th[2])^(3/2) + x[1]^(1/3)*th[1]",
        "sin(x[1]*th[1])/(2 + cos(y[1]))",
    ];
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut rnd = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    for text in texts {
        let e = Expression::parse(text, &l).unwrap().with_param("a", 0.7);
        let slots: Vec<usize> = (0..6).collect();
        let grad = e.gradient(&slots);
        let hess = e.hessian(&slots);
        for _ in 0..100 {
            let mut p: Vec<f64> = (0..6).map(|_| rnd()).collect();
            p[0] += 1.5;
            p[5] += if p[5] >= 0.0 { 0.3 } else { -0.3 };
            let h = 1e-5;
            for i in 0..6 {
                let mut a = p.clone();
                let mut b = p.clone();
                a[i] += h;
                b[i] -= h;
                let fd = (e.evaluate(&a).unwrap() - e.evaluate(&b).unwrap()) / (2.0 * h);
                let g = grad[i].evaluate(&p).unwrap();
                assert!((fd - g).abs() <= 1e-6 * (1.0 + g.abs()), "{text}: d{i} {fd} vs {g}");
                for j in 0..6 {
                    let fd2 = (grad[j].evaluate(&a).unwrap() - grad[j].evaluate(&b).unwrap()) / (2.0 * h);
                    let hv = hess[i][j].evaluate(&p).unwrap();
                    assert!((fd2 - hv).abs() <= 1e-6 * (1.0 + hv.abs()), "{text}: d{i}d{j} {fd2} vs {hv}");
                }
            }
        }
    }
}

#[test]
fn print_parse_round_trip() {
    let l = layout();
    let texts = [
        "(x[1]-xp[1]*cos($a)+yp[1]*sin($a))*th[1] + (y[1]-xp[1]*sin($a)-yp[1]*cos($a))*th[2]",
        "-2^2 - -x[1] + (-3)*th[2]^(-1) / (x[1]*y[1]) - (x[1] - y[1]) - (x[1] + y[1])",
        "norm(th[2..2]) + norm(th[1]) * abs(th[1])^(1/2) + 1e-7 * 2.5e20 + sgn(-x[1])",
        "x[1]/(y[1]/xp[1]) * (yp[1]*th[1]) + (-x[1])^3 + --th[1]",
    ];
    for text in texts {
        let e = Expression::parse(text, &l).unwrap();
        for candidate in [e.clone(), e.simplified(), e.differentiate(0), e.differentiate(5).differentiate(4)] {
            let printed = candidate.to_string();
            let back = Expression::parse(&printed, &l).unwrap();
            assert_eq!(back, candidate, "{printed}");
        }
    }
}

#[test]
fn compiled_matches_tree_evaluation() {
    let l = layout();
    let e = Expression::parse("exp(-x[1]^2)*(x[1]-xp[1])*th[1] + $t*norm(th) - sqrt(abs(y[1]))/th[2]", &l)
        .unwrap()
        .with_param("t", 1.25);
    let c = e.compile().unwrap();
    let p = [0.3, -0.2, 0.9, 0.1, 1.5, -0.7];
    assert_eq!(c.eval(&p).unwrap(), e.evaluate(&p).unwrap());
    let bad = [0.3, -0.2, 0.9, 0.1, 1.5, 0.0];
    assert!(matches!(c.eval(&bad), Err(EvalError::SingularLocus { .. })));
}

#[test]
fn singular_margin_tracks_norm_and_denominators() {
    let l = layout();
    let e = Expression::parse("x[1]/(th[1] - 0.25) + norm(th)", &l).unwrap();
    let m = e.singular_margin(&[0.0, 0.0, 0.0, 0.0, 0.3, 0.0]).unwrap();
    assert!((m - 0.05).abs() < 1e-12);
    let lin = Expression::parse("x[1]*th[1]", &l).unwrap();
    assert_eq!(lin.singular_margin(&[1.0; 6]).unwrap(), f64::INFINITY);
}

#[test]
fn substitution_keeps_contiguous_norms() {
    let l = layout();
    let e = Expression::parse("(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2] + norm(th)", &l).unwrap();
    let small = Arc::new(BlockLayout::new(&[("x", 1), ("xp", 1), ("th", 2)]).unwrap());
    let r = e.substitute(&small, &|s| match s {
        0 => Node::Var(0),
        2 => Node::Var(1),
        4 => Node::Var(2),
        5 => Node::Var(3),
        _ => Node::Const(0.0),
    });
    assert_eq!(r.to_string(), "(x[1] - xp[1])*th[1] + norm(th)");
}

#[test]
fn homogeneity_examples() {
    let l = layout();
    let samples: Vec<Vec<f64>> = (0..20)
        .map(|k| {
            let a = k as f64 * 0.37;
            vec![a.sin(), 0.1, a.cos(), -0.2, 1.0 + 0.1 * k as f64, 0.5 - 0.05 * k as f64]
        })
        .collect();
    for text in ["(x[1]-xp[1])*th[1]", "norm(th)"] {
        let e = Expression::parse(text, &l).unwrap();
        let r = check_homogeneity(&e, "th", 1.0, &samples, 1e-9).unwrap();
        assert!(r.passed, "{text}: {r:?}");
        assert!(r.worst_residual() < 1e-12);
    }
    let q = Expression::parse("th[1]^2", &l).unwrap();
    let r = check_homogeneity(&q, "th", 1.0, &samples, 1e-9).unwrap();
    assert!(!r.passed);
    let k = r.worst_sample.unwrap();
    let t = samples[k][4];
    assert!(r.euler_residual >= t * t / (1.0 + t * t) - 1e-12);
}
