use std::sync::Arc;

use fiotrace_core::canonical::{graph_lagrangian, lift_point_transformation, sample_cotangent, validate_canonical};
use fiotrace_core::expr::{BlockLayout, Expression};
use fiotrace_core::linalg::rank_decision;
use fiotrace_core::quad::gauss_legendre_on;
use fiotrace_core::trace::EmbeddingChart;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn layout() -> Arc<BlockLayout> {
    EmbeddingChart::new(2, 1).unwrap().phase_layout(2)
}

/// Smooth expressions over `x[1], y[1], xp[1], th[1], th[2]`.
fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x[1]".to_string()),
        Just("y[1]".to_string()),
        Just("xp[1]".to_string()),
        Just("th[1]".to_string()),
        Just("th[2]".to_string()),
        (-3.0f64..3.0).prop_map(|c| format!("({c})")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("exp(sin({a}))")),
            inner.prop_map(|a| format!("({a})^2")),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 6)
}

fn cases() -> ProptestConfig {
    ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn symbolic_derivatives_match_central_differences(text in smooth_expr(), c in point()) {
        let e = Expression::parse(&text, &layout()).unwrap();
        for slot in 0..c.len() {
            let h = 1e-5;
            let (mut up, mut dn) = (c.clone(), c.clone());
            up[slot] += h;
            dn[slot] -= h;
            let fd = (e.evaluate(&up).unwrap() - e.evaluate(&dn).unwrap()) / (2.0 * h);
            let sym = e.differentiate(slot).evaluate(&c).unwrap();
            let scale = sym.abs().max(e.evaluate(&c).unwrap().abs()).max(1.0);
            prop_assert!((fd - sym).abs() < 1e-6 * scale, "{text}: slot {slot}: fd {fd} vs {sym}");
        }
    }

    #[test]
    fn printing_and_reparsing_preserves_values(text in smooth_expr(), c in point()) {
        let e = Expression::parse(&text, &layout()).unwrap();
        let printed = e.to_string();
        let again = Expression::parse(&printed, &layout()).unwrap();
        let (a, b) = (e.evaluate(&c).unwrap(), again.evaluate(&c).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{text} -> {printed}: {a} vs {b}");
    }

    #[test]
    fn compiled_and_tree_evaluation_agree(text in smooth_expr(), c in point()) {
        let e = Expression::parse(&text, &layout()).unwrap();
        let compiled = e.compile().unwrap();
        let (a, b) = (e.evaluate(&c).unwrap(), compiled.eval(&c).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{text}: {a} vs {b}");
    }

    #[test]
    fn gauss_legendre_is_exact_to_degree_2n_minus_1(
        n in 1usize..12,
        coeffs in prop::collection::vec(-2.0f64..2.0, 24),
        a in -3.0f64..0.0,
        len in 0.1f64..4.0,
    ) {
        let b = a + len;
        let deg = 2 * n - 1;
        let (x, w) = gauss_legendre_on(n, a, b);
        let poly = |t: f64| coeffs[..=deg].iter().rev().fold(0.0, |acc, c| acc * t + c);
        let quad: f64 = x.iter().zip(&w).map(|(t, v)| v * poly(*t)).sum();
        let exact: f64 = coeffs[..=deg]
            .iter()
            .enumerate()
            .map(|(k, c)| c * (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)) / (k as f64 + 1.0))
            .sum();
        prop_assert!((quad - exact).abs() < 1e-10 * exact.abs().max(1.0), "n {n}: {quad} vs {exact}");
    }

    #[test]
    fn numerical_rank_of_low_rank_products(rank in 0usize..4, entries in prop::collection::vec(-1.0f64..1.0, 48), seed in 1.0f64..2.0) {
        let a = DMatrix::from_fn(6, rank, |i, j| entries[(i * 4 + j) % 48] + if i == j { seed } else { 0.0 });
        let b = DMatrix::from_fn(rank, 5, |i, j| entries[(24 + i * 5 + j) % 48] + if i == j { seed } else { 0.0 });
        let m = &a * &b;
        prop_assert_eq!(rank_decision(&m, 1e-9).rank, rank);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..cases() })]

    #[test]
    fn cotangent_lifts_of_shears_and_rotations_are_canonical(alpha in -3.0f64..3.0, shear in -2.0f64..2.0) {
        let chart = EmbeddingChart::new(2, 1).unwrap();
        let l = chart.cotangent_layout();
        let parse = |v: [String; 2]| v.iter().map(|t| Expression::parse(t, &l).unwrap()).collect::<Vec<_>>();
        let (c, s) = (alpha.cos(), alpha.sin());
        // rotation after shear (x, y) ↦ (x + k·y, y)
        let psi = parse([format!("({c})*(x[1] + ({shear})*y[1]) - ({s})*y[1]"), format!("({s})*(x[1] + ({shear})*y[1]) + ({c})*y[1]")]);
        let inv = parse([
            format!("({c})*x[1] + ({s})*y[1] - ({shear})*(-({s})*x[1] + ({c})*y[1])"),
            format!("-({s})*x[1] + ({c})*y[1]"),
        ]);
        let g = lift_point_transformation(&chart, psi, inv, Vec::new()).unwrap();
        let samples = sample_cotangent(&g, 20, 11);
        let report = validate_canonical(&g, &samples).unwrap();
        prop_assert!(report.passed(), "{report:?}");
        prop_assert!(graph_lagrangian(&g, &samples).unwrap().isotropy < 1e-9);
    }
}
