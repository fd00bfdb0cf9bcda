//! Dense linear-algebra helpers on top of nalgebra: rank decisions with
//! singular-value gaps, null spaces, minimum-norm solves, signatures.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

/// Gap below which a rank decision is flagged as marginal.
pub const MARGINAL_GAP: f64 = 1e3;

/// Default relative rank tolerance.
pub const RANK_TOL: f64 = 1e-8;

/// A rank decision together with the evidence it rests on.
#[derive(Clone, Debug, PartialEq)]
pub struct RankDecision {
    pub rank: usize,
    /// Singular values in descending order.
    pub singular_values: Vec<f64>,
    /// σ_r / σ_{r+1}; infinite when nothing is truncated or σ_{r+1} = 0.
    pub gap: f64,
}

impl RankDecision {
    pub fn marginal(&self) -> bool {
        self.gap < MARGINAL_GAP
    }
}

/// Singular values (descending) and a full right-singular basis (columns of `v`).
pub fn svd_full(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    if c == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(c, c);
    for (k, &i) in idx.iter().enumerate() {
        v.set_column(k, &vt.row(i).transpose());
    }
    let sv = sv.into_iter().take(r.min(c)).collect();
    (sv, v)
}

fn decide(sv: Vec<f64>, threshold: f64) -> RankDecision {
    let rank = sv.iter().filter(|&&s| s > threshold).count();
    let gap = match (rank, sv.get(rank)) {
        (0, _) => sv.first().map_or(f64::INFINITY, |&s| if s == 0.0 { f64::INFINITY } else { threshold / s }),
        (_, None) => f64::INFINITY,
        (_, Some(&0.0)) => f64::INFINITY,
        (_, Some(&next)) => sv[rank - 1] / next,
    };
    RankDecision { rank, singular_values: sv, gap }
}

/// Rank with threshold `tol_rel × σ_max`.
pub fn rank_decision(m: &DMatrix<f64>, tol_rel: f64) -> RankDecision {
    let sv = singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    decide(sv, tol_rel * smax)
}

/// Rank with an absolute threshold.
pub fn rank_decision_abs(m: &DMatrix<f64>, tol_abs: f64) -> RankDecision {
    decide(singular_values(m), tol_abs)
}

pub fn numeric_rank(m: &DMatrix<f64>, tol_rel: f64) -> usize {
    rank_decision(m, tol_rel).rank
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Orthonormal basis (as columns) of the null space, with the rank decision used.
pub fn null_space(m: &DMatrix<f64>, tol_rel: f64) -> (DMatrix<f64>, RankDecision) {
    let n = m.ncols();
    if m.nrows() == 0 {
        return (DMatrix::identity(n, n), RankDecision { rank: 0, singular_values: Vec::new(), gap: f64::INFINITY });
    }
    let (sv, v) = svd_full(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let d = decide(sv, tol_rel * smax);
    let basis = v.columns(d.rank, n - d.rank).into_owned();
    (basis, d)
}

/// Orthonormal basis of the column space.
pub fn column_space(m: &DMatrix<f64>, tol_rel: f64) -> (DMatrix<f64>, RankDecision) {
    if m.ncols() == 0 || m.nrows() == 0 {
        return (DMatrix::zeros(m.nrows(), 0), RankDecision { rank: 0, singular_values: Vec::new(), gap: f64::INFINITY });
    }
    let (sv, u) = svd_full(&m.transpose());
    let smax = sv.first().copied().unwrap_or(0.0);
    let d = decide(sv, tol_rel * smax);
    (u.columns(0, d.rank).into_owned(), d)
}

/// Minimum-norm least-squares solution of `a x = b` with relative truncation.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, tol_rel: f64) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (tol_rel * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Signature and eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(h: &DMatrix<f64>) -> Vec<f64> {
    let sym = (h + h.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Deterministic pairwise summation (fixed reduction tree in index order).
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(numeric_rank(&DMatrix::identity(2, 2), RANK_TOL), 2);
        assert_eq!(numeric_rank(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), RANK_TOL), 1);
        let d = rank_decision(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-12]), RANK_TOL);
        assert_eq!(d.rank, 1);
        assert!(!d.marginal());
        assert_eq!(numeric_rank(&DMatrix::zeros(3, 2), RANK_TOL), 0);
    }

    #[test]
    fn null_space_of_wide_matrix_is_complete() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let (ns, d) = null_space(&m, RANK_TOL);
        assert_eq!(d.rank, 1);
        assert_eq!(ns.ncols(), 2);
        assert!((&m * &ns).norm() < 1e-14);
        assert!((ns.transpose() * &ns - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn lstsq_is_minimum_norm() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = lstsq(&a, &DVector::from_vec(alloc::vec![2.0]), 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pairwise_sum_matches_naive_sum() {
        let v: Vec<f64> = (0..1000).map(|k| 1.0 / (1.0 + k as f64)).collect();
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-12);
    }
}
