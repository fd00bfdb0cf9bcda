use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{ConstraintSubmanifold, GeomError};
use crate::linalg::{self, RANK_TOL};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CleanOptions {
    pub min_samples: usize,
    /// Samples whose residual on A or B exceeds this are not counted.
    pub tol_residual: f64,
    /// Perturbation radius for the local-dimension probe.
    pub local_radius: f64,
    pub seed: u64,
}

impl Default for CleanOptions {
    fn default() -> Self {
        Self { min_samples: 20, tol_residual: 1e-8, local_radius: 1e-5, seed: 0x5eed }
    }
}

/// Sample-based certificate for `T(A∩B) = T_A ∩ T_B`.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanReport {
    /// The sampled local dimension of `A∩B` is the same at every sample.
    pub is_manifold: bool,
    /// Common value of `dim(T_A ∩ T_B)` (= ambient − stacked rank).
    pub intersection_dim: Option<usize>,
    /// Common sampled dimension of `A∩B` itself.
    pub local_dim: Option<usize>,
    pub rank_constant: bool,
    pub tangent_equality: bool,
    /// `intersection_dim − (dim A + dim B − ambient)`.
    pub excess_over_transversal: Option<i64>,
    pub samples_used: usize,
    /// Largest `dim(T_A ∩ T_B) − dim T(A∩B)` over the samples.
    pub worst_gap: f64,
    pub worst_sample: Option<Vec<f64>>,
    /// Some rank decision had a singular-value gap below the marginal threshold.
    pub marginal: bool,
    pub min_rank_gap: f64,
}

impl CleanReport {
    pub fn clean(&self) -> bool {
        self.is_manifold && self.rank_constant && self.tangent_equality
    }
}

fn common(values: &[usize]) -> Option<usize> {
    let first = *values.first()?;
    values.iter().all(|&v| v == first).then_some(first)
}

/// Certifies cleanness of `A ∩ B` on the given samples.
pub fn clean_intersection_check(
    a: &ConstraintSubmanifold,
    b: &ConstraintSubmanifold,
    samples: &[Vec<f64>],
    opts: &CleanOptions,
) -> Result<CleanReport, GeomError> {
    if samples.is_empty() {
        return Err(GeomError::EmptyIntersection);
    }
    let n = a.ambient_dim();
    if b.ambient_dim() != n {
        return Err(GeomError::DimensionMismatch { expected: n, found: b.ambient_dim() });
    }
    let stacked = a.intersect(b)?;
    let mut rng = rng::seeded(opts.seed);
    let mut cap_dims = Vec::new();
    let mut stacked_ranks = Vec::new();
    let mut local_dims = Vec::new();
    let mut transversal = Vec::new();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_sample = None;
    let mut min_gap = f64::INFINITY;
    for x in samples {
        let scale = 1.0 + linalg::norm(x);
        if a.residual_norm(x)? > opts.tol_residual * scale || b.residual_norm(x)? > opts.tol_residual * scale {
            continue;
        }
        let ta = a.tangent_basis(x)?;
        let tb = b.tangent_basis(x)?;
        let (da, db) = (ta.ncols(), tb.ncols());
        let mut joined = DMatrix::zeros(n, da + db);
        joined.view_mut((0, 0), (n, da)).copy_from(&ta);
        joined.view_mut((0, da), (n, db)).copy_from(&tb);
        let span = linalg::rank_decision(&joined, RANK_TOL);
        let cap = da + db - span.rank;
        let sr = linalg::rank_decision(&stacked.jacobian(x)?, RANK_TOL);
        let ld = stacked.local_dimension(x, &mut rng, opts.local_radius)?;
        for g in [span.gap, sr.gap, ld.gap] {
            min_gap = min_gap.min(g);
        }
        let gap = cap as f64 - ld.rank as f64;
        if gap > worst_gap {
            worst_gap = gap;
            worst_sample = Some(x.clone());
        }
        cap_dims.push(cap);
        stacked_ranks.push(sr.rank);
        local_dims.push(ld.rank);
        transversal.push(da as i64 + db as i64 - n as i64);
    }
    if cap_dims.len() < opts.min_samples {
        return Err(GeomError::TooFewSamples { found: cap_dims.len(), required: opts.min_samples });
    }
    let intersection_dim = common(&cap_dims);
    let local_dim = common(&local_dims);
    let excess = match (intersection_dim, transversal.first()) {
        (Some(d), Some(&t)) if transversal.iter().all(|&v| v == t) => Some(d as i64 - t),
        _ => None,
    };
    Ok(CleanReport {
        is_manifold: local_dim.is_some(),
        intersection_dim,
        local_dim,
        rank_constant: common(&stacked_ranks).is_some(),
        tangent_equality: cap_dims.iter().zip(&local_dims).all(|(c, l)| c == l),
        excess_over_transversal: excess,
        samples_used: cap_dims.len(),
        worst_gap,
        worst_sample,
        marginal: min_gap < linalg::MARGINAL_GAP,
        min_rank_gap: min_gap,
    })
}
