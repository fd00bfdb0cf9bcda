use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::*;
use crate::expr::{BlockLayout, Expression};
use crate::linalg::{numeric_rank, RANK_TOL};

fn layout(blocks: &[(&str, usize)]) -> Arc<BlockLayout> {
    Arc::new(BlockLayout::new(blocks).unwrap())
}

fn sub(l: &Arc<BlockLayout>, texts: &[&str]) -> ConstraintSubmanifold {
    let cs = texts.iter().map(|t| Expression::parse(t, l).unwrap()).collect();
    ConstraintSubmanifold::new(l, cs).unwrap()
}

fn copies(p: &[f64], k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|_| p.to_vec()).collect()
}

#[test]
fn tangent_basis_examples() {
    let l = layout(&[("x", 1), ("y", 1)]);
    let circle = sub(&l, &["x[1]^2 + y[1]^2 - 1"]).with_expected_dim(1);
    let t = circle.tangent_basis(&[1.0, 0.0]).unwrap();
    assert_eq!(t.ncols(), 1);
    assert!(t[(0, 0)].abs() < 1e-14 && (t[(1, 0)].abs() - 1.0).abs() < 1e-14);

    let l3 = layout(&[("x", 3)]);
    let plane = sub(&l3, &["x[2]"]).with_expected_dim(2);
    let t = plane.tangent_basis(&[0.3, 0.0, -2.0]).unwrap();
    assert_eq!(t.ncols(), 2);
    assert!(t.row(1).norm() < 1e-14);

    let cone = sub(&l3, &["x[1]^2 + x[2]^2 - x[3]^2"]).with_expected_dim(2);
    assert!(matches!(cone.tangent_basis(&[0.0, 0.0, 0.0]), Err(GeomError::NotRegular { rank: 0, .. })));
}

#[test]
fn transversal_lines_are_clean() {
    let l = layout(&[("x", 1), ("y", 1)]);
    let a = sub(&l, &["y[1]"]).with_expected_dim(1);
    let b = sub(&l, &["y[1] - x[1]*1"]).with_expected_dim(1);
    let r = clean_intersection_check(&a, &b, &copies(&[0.0, 0.0], 20), &CleanOptions::default()).unwrap();
    assert!(r.clean());
    assert_eq!(r.intersection_dim, Some(0));
    assert_eq!(r.excess_over_transversal, Some(0));
    assert_eq!(r.worst_gap, 0.0);
}

#[test]
fn tangent_parabola_is_not_clean() {
    let l = layout(&[("x", 1), ("y", 1)]);
    let a = sub(&l, &["y[1]"]).with_expected_dim(1);
    let b = sub(&l, &["y[1] - x[1]^2"]).with_expected_dim(1);
    let stacked = a.intersect(&b).unwrap();
    let seeds: Vec<Vec<f64>> = (0..20).map(|k| vec![0.01 * (k as f64 - 9.5), 0.003]).collect();
    let found = stacked.solve_points(&seeds, &SolveOptions::default(), 0.0).unwrap();
    assert_eq!(found.points.len(), 20);
    let r = clean_intersection_check(&a, &b, &found.points, &CleanOptions::default()).unwrap();
    assert!(!r.tangent_equality);
    assert!(!r.clean());
    assert_eq!(r.intersection_dim, Some(1));
    assert_eq!(r.local_dim, Some(0));
    assert_eq!(r.worst_gap, 1.0);
}

#[test]
fn self_intersection_is_clean_with_excess_codim() {
    let l = layout(&[("x", 3)]);
    let a = sub(&l, &["x[3] - x[1]*x[2]"]).with_expected_dim(2);
    let samples: Vec<Vec<f64>> = (0..25)
        .map(|k| {
            let (u, v) = (0.1 * k as f64 - 1.0, 0.5 - 0.03 * k as f64);
            vec![u, v, u * v]
        })
        .collect();
    let r = clean_intersection_check(&a, &a, &samples, &CleanOptions::default()).unwrap();
    assert!(r.clean());
    assert_eq!(r.excess_over_transversal, Some(1));
    assert_eq!(r.local_dim, Some(2));
}

#[test]
fn empty_and_sparse_sample_sets_are_errors() {
    let l = layout(&[("x", 1), ("y", 1)]);
    let a = sub(&l, &["y[1]"]).with_expected_dim(1);
    assert_eq!(clean_intersection_check(&a, &a, &[], &CleanOptions::default()), Err(GeomError::EmptyIntersection));
    assert!(matches!(
        clean_intersection_check(&a, &a, &copies(&[0.0, 0.0], 3), &CleanOptions::default()),
        Err(GeomError::TooFewSamples { found: 3, required: 20 })
    ));
}

/// Exact rank of an integer matrix by fraction-free elimination.
fn exact_rank(rows: &[Vec<i64>]) -> usize {
    let mut m: Vec<Vec<i128>> = rows.iter().map(|r| r.iter().map(|&v| v as i128).collect()).collect();
    let cols = m.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..m.len()).find(|&r| m[r][c] != 0) else { continue };
        m.swap(rank, p);
        for r in 0..m.len() {
            if r != rank && m[r][c] != 0 {
                let (a, b) = (m[rank][c], m[r][c]);
                let pivot = m[rank].clone();
                for (v, p) in m[r].iter_mut().zip(&pivot) {
                    *v = *v * a - p * b;
                }
                let g = m[r].iter().fold(0i128, |g, &v| gcd(g, v.abs()));
                if g > 1 {
                    m[r].iter_mut().for_each(|v| *v /= g);
                }
            }
        }
        rank += 1;
    }
    rank
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 { a } else { gcd(b, a % b) }
}

#[test]
fn linear_intersections_match_exact_rank() {
    let l = layout(&[("x", 5)]);
    let mut r = crate::rng::seeded(7);
    for trial in 0..12 {
        let ka = 1 + trial % 3;
        let kb = 1 + (trial / 3) % 3;
        let mut rows: Vec<Vec<i64>> = (0..ka + kb)
            .map(|_| (0..5).map(|_| (crate::rng::uniform(&mut r, -3.0, 3.99)).floor() as i64).collect())
            .collect();
        if trial % 4 == 0 {
            let dup = rows[0].clone();
            rows[ka] = dup;
        }
        let to_expr = |row: &Vec<i64>| {
            let terms: Vec<alloc::string::String> =
                row.iter().enumerate().map(|(i, c)| alloc::format!("({c})*x[{}]", i + 1)).collect();
            Expression::parse(&terms.join(" + "), &l).unwrap()
        };
        let ra = exact_rank(&rows[..ka]);
        let rb = exact_rank(&rows[ka..]);
        let a = ConstraintSubmanifold::new(&l, rows[..ka].iter().map(to_expr).collect()).unwrap().with_expected_dim(5 - ra);
        let b = ConstraintSubmanifold::new(&l, rows[ka..].iter().map(to_expr).collect()).unwrap().with_expected_dim(5 - rb);
        let stacked = a.intersect(&b).unwrap();
        let seeds: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| crate::rng::uniform(&mut r, -1.0, 1.0)).collect()).collect();
        let pts = stacked.solve_points(&seeds, &SolveOptions::default(), 0.0).unwrap().points;
        let rep = clean_intersection_check(&a, &b, &pts, &CleanOptions::default()).unwrap();
        assert_eq!(rep.intersection_dim, Some(5 - exact_rank(&rows)), "trial {trial}");
        assert!(rep.clean());
    }
}

#[test]
fn numeric_rank_is_orthogonally_invariant() {
    let mut r = crate::rng::seeded(11);
    for rank in 0..=4 {
        let f = DMatrix::from_fn(5, rank, |_, _| crate::rng::gaussian(&mut r));
        let g = DMatrix::from_fn(rank, 6, |_, _| crate::rng::gaussian(&mut r));
        let m = &f * &g;
        let q1 = DMatrix::from_fn(5, 5, |_, _| crate::rng::gaussian(&mut r)).qr().q();
        let q2 = DMatrix::from_fn(6, 6, |_, _| crate::rng::gaussian(&mut r)).qr().q();
        assert_eq!(numeric_rank(&m, RANK_TOL), rank);
        assert_eq!(numeric_rank(&(&q1 * &m * &q2), RANK_TOL), rank);
        let mut p = m.clone();
        p.swap_rows(0, 4);
        p.swap_columns(1, 5);
        assert_eq!(numeric_rank(&p, RANK_TOL), rank);
    }
}

#[test]
fn symplectic_form_signs() {
    let s = SymplecticSpace::Product { n: 2 };
    let e = |i: usize| {
        let mut v = vec![0.0; 8];
        v[i] = 1.0;
        v
    };
    // (x, y, p, q, x′, y′, p′, q′)
    assert_eq!(symplectic_form_value(s, &e(0), &e(2)).unwrap(), 1.0);
    assert_eq!(symplectic_form_value(s, &e(1), &e(3)).unwrap(), 1.0);
    assert_eq!(symplectic_form_value(s, &e(4), &e(6)).unwrap(), -1.0);
    assert_eq!(symplectic_form_value(s, &e(2), &e(0)).unwrap(), -1.0);
    let u = vec![0.3, -1.0, 2.0, 0.5, 1.1, 0.0, -0.7, 4.0];
    assert_eq!(symplectic_form_value(s, &u, &u).unwrap(), 0.0);
    assert!(symplectic_form_value(s, &u[..4], &u).is_err());
    assert_eq!(symplectic_form_value(SymplecticSpace::Single { n: 1 }, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
}

#[test]
fn cone_sampling_examples() {
    let l = layout(&[("p", 1), ("q", 1)]);
    let free = ConstraintSubmanifold::new(&l, Vec::new()).unwrap().conic(vec![0, 1]);
    let spec = ConeSampling { count: 50, ..ConeSampling::default() };
    let pts = sample_cone(&free, &spec).unwrap();
    assert_eq!(pts.len(), 50);
    assert!(pts.iter().all(|p| (crate::linalg::norm(p) - 1.0).abs() < 1e-12));

    let empty = sub(&l, &["1"]).conic(vec![0, 1]);
    assert!(matches!(sample_cone(&empty, &ConeSampling { count: 5, ..spec }), Err(GeomError::Starvation { accepted: 0, .. })));

    let axis = sub(&l, &["q[1]"]).conic(vec![0, 1]);
    let pts = sample_cone(&axis, &ConeSampling { radii: (1.0, 2.0), ..spec }).unwrap();
    for p in &pts { assert!(p[1].abs() < 1e-14 && (1.0..=2.0).contains(&p[0].abs()), "{p:?}"); }
}
