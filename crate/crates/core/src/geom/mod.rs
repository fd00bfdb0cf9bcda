//! Constraint submanifolds, Gauss–Newton projection, clean-intersection
//! certification, the symplectic form and cone sampling.

mod clean;
mod sample;
mod symplectic;

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::expr::{BlockLayout, CompiledSet, EvalError, Expression, Node};
use crate::linalg::{self, RankDecision};
use crate::rng::{self, SampleRng};

pub use clean::{clean_intersection_check, CleanOptions, CleanReport};
pub use sample::{sample_cone, ConeSampling};
pub use symplectic::{symplectic_form_value, SymplecticSpace};

#[derive(Clone, Debug, PartialEq)]
pub enum GeomError {
    Eval(EvalError),
    DimensionMismatch { expected: usize, found: usize },
    NotRegular { rank: usize, expected: usize, point: Vec<f64> },
    EmptyIntersection,
    TooFewSamples { found: usize, required: usize },
    Starvation { accepted: usize, attempts: usize },
    Unsupported(String),
}

impl fmt::Display for GeomError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeomError::Eval(e) => write!(f, "{e}"),
            GeomError::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            GeomError::NotRegular { rank, expected, point } => write!(
                f,
                "not a regular point: constraint rank {rank}, expected {expected} at {point:?}"
            ),
            GeomError::EmptyIntersection => write!(f, "empty intersection"),
            GeomError::TooFewSamples { found, required } => {
                write!(f, "too few intersection samples: {found} < {required}")
            }
            GeomError::Starvation { accepted, attempts } => write!(
                f,
                "sampler starvation: {accepted} accepted out of {attempts} attempts (rate {:.3})",
                *accepted as f64 / (*attempts).max(1) as f64
            ),
            GeomError::Unsupported(msg) => write!(f, "unsupported: {msg}"),
        }
    }
}

impl core::error::Error for GeomError {}

impl From<EvalError> for GeomError {
    fn from(e: EvalError) -> Self {
        GeomError::Eval(e)
    }
}

/// Gauss–Newton controls. Iteration stops once the step stalls, so tangential
/// (linearly converging) solves still reach machine precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol_residual: f64,
    pub tol_step: f64,
    pub max_iter: usize,
    pub max_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol_residual: 1e-10, tol_step: 1e-15, max_iter: 400, max_step: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub point: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Zero set of a list of expressions, optionally conic in `fiber` slots and
/// restricted to an open domain `{d > 0}` away from declared singular loci.
#[derive(Clone, Debug)]
pub struct ConstraintSubmanifold {
    layout: Arc<BlockLayout>,
    constraints: Vec<Expression>,
    residual_fns: CompiledSet,
    jacobian_fns: CompiledSet,
    expected_dim: Option<usize>,
    fiber: Vec<usize>,
    domain: Vec<Expression>,
    domain_fns: CompiledSet,
    guards: Vec<Expression>,
    guard_tol: f64,
}

impl ConstraintSubmanifold {
    pub fn new(layout: &Arc<BlockLayout>, constraints: Vec<Expression>) -> Result<Self, GeomError> {
        let n = layout.total_dim();
        for c in &constraints {
            if c.layout().total_dim() != n {
                return Err(GeomError::DimensionMismatch { expected: n, found: c.layout().total_dim() });
            }
        }
        let jac: Vec<Expression> = constraints
            .iter()
            .flat_map(|c| (0..n).map(move |s| c.differentiate(s)))
            .collect();
        Ok(Self {
            layout: layout.clone(),
            residual_fns: CompiledSet::new(&constraints)?,
            jacobian_fns: CompiledSet::new(&jac)?,
            constraints,
            expected_dim: None,
            fiber: Vec::new(),
            domain: Vec::new(),
            domain_fns: CompiledSet::new(&[])?,
            guards: Vec::new(),
            guard_tol: 1e-9,
        })
    }

    /// `{x_s = 0 for s in slots}`.
    pub fn coordinate_plane(layout: &Arc<BlockLayout>, slots: &[usize]) -> Result<Self, GeomError> {
        let cs = slots.iter().map(|&s| Expression::var(s, layout)).collect();
        let mut sub = Self::new(layout, cs)?;
        sub.expected_dim = Some(layout.total_dim() - slots.len());
        Ok(sub)
    }

    pub fn with_expected_dim(mut self, dim: usize) -> Self {
        self.expected_dim = Some(dim);
        self
    }

    pub fn conic(mut self, fiber: Vec<usize>) -> Self {
        self.fiber = fiber;
        self
    }

    /// Adds strict inequalities `d > 0` defining an open domain.
    pub fn with_domain(mut self, domain: Vec<Expression>) -> Result<Self, GeomError> {
        self.domain.extend(domain);
        self.domain_fns = CompiledSet::new(&self.domain)?;
        Ok(self)
    }

    /// Adds expressions whose singular loci must be avoided.
    pub fn with_guards(mut self, guards: Vec<Expression>) -> Self {
        self.guards.extend(guards);
        self
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn ambient_dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn constraints(&self) -> &[Expression] {
        &self.constraints
    }

    pub fn expected_dim(&self) -> Option<usize> {
        self.expected_dim
    }

    pub fn fiber(&self) -> &[usize] {
        &self.fiber
    }

    pub fn domain(&self) -> &[Expression] {
        &self.domain
    }

    pub fn guards(&self) -> &[Expression] {
        &self.guards
    }

    pub fn is_conic(&self) -> bool {
        !self.fiber.is_empty()
    }

    /// Stacked constraints of `self` and `other` (the intersection).
    pub fn intersect(&self, other: &Self) -> Result<Self, GeomError> {
        let mut cs = self.constraints.clone();
        cs.extend(other.constraints.iter().cloned());
        let mut sub = Self::new(&self.layout, cs)?
            .conic(self.fiber.clone())
            .with_guards(self.guards.clone())
            .with_guards(other.guards.clone());
        let mut dom = self.domain.clone();
        dom.extend(other.domain.iter().cloned());
        sub = sub.with_domain(dom)?;
        Ok(sub)
    }

    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>, GeomError> {
        self.check_len(x)?;
        Ok(self.residual_fns.eval(x)?)
    }

    pub fn residual_norm(&self, x: &[f64]) -> Result<f64, GeomError> {
        Ok(linalg::norm(&self.residual(x)?))
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, GeomError> {
        self.check_len(x)?;
        let n = self.ambient_dim();
        let vals = self.jacobian_fns.eval(x)?;
        Ok(DMatrix::from_row_slice(self.constraints.len(), n, &vals))
    }

    fn check_len(&self, x: &[f64]) -> Result<(), GeomError> {
        if x.len() != self.ambient_dim() {
            return Err(GeomError::DimensionMismatch { expected: self.ambient_dim(), found: x.len() });
        }
        Ok(())
    }

    /// Membership in the open domain, away from every declared singular locus.
    pub fn in_domain(&self, x: &[f64]) -> bool {
        if x.len() != self.ambient_dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        if self.is_conic() && self.fiber_norm(x) < self.guard_tol {
            return false;
        }
        match self.domain_fns.eval(x) {
            Ok(v) if v.iter().all(|&d| d > 0.0) => {}
            _ => return false,
        }
        self.constraints.iter().chain(&self.domain).chain(&self.guards).all(|e| {
            matches!(e.singular_margin(x), Ok(m) if m > self.guard_tol)
        })
    }

    pub fn fiber_norm(&self, x: &[f64]) -> f64 {
        libm::sqrt(self.fiber.iter().map(|&s| x[s] * x[s]).sum())
    }

    /// Rescales the fiber coordinates to unit norm (conic sets only).
    pub fn normalize_fiber(&self, x: &mut [f64]) {
        let r = self.fiber_norm(x);
        if r > 0.0 {
            for &s in &self.fiber {
                x[s] /= r;
            }
        }
    }

    pub fn scale_fiber(&self, x: &mut [f64], lambda: f64) {
        for &s in &self.fiber {
            x[s] *= lambda;
        }
    }

    /// Gauss–Newton with minimum-norm steps from `seed`.
    pub fn project(&self, seed: &[f64], opts: &SolveOptions) -> Result<Projection, GeomError> {
        self.check_len(seed)?;
        let mut x = seed.to_vec();
        let mut res = match self.residual_fns.eval(&x) {
            Ok(r) => r,
            Err(_) => return Ok(Projection { point: x, residual: f64::INFINITY, iterations: 0, converged: false }),
        };
        let mut rnorm = linalg::norm(&res);
        let mut it = 0;
        let mut stalled = 0;
        while it < opts.max_iter {
            it += 1;
            let j = match self.jacobian(&x) {
                Ok(j) => j,
                Err(_) => break,
            };
            let mut step = linalg::lstsq(&j, &-DVector::from_vec(res.clone()), 1e-12);
            let slen = step.norm();
            let cap = opts.max_step * (1.0 + linalg::norm(&x));
            if slen > cap {
                step *= cap / slen;
            }
            let mut accepted = false;
            let mut t = 1.0;
            for _ in 0..30 {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
                if let Ok(r) = self.residual_fns.eval(&trial) {
                    let rn = linalg::norm(&r);
                    if rn <= rnorm * (1.0 + 1e-12) || rn < opts.tol_residual * 1e-3 {
                        x = trial;
                        res = r;
                        rnorm = rn;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            let moved = t * slen;
            if !accepted || moved <= opts.tol_step * (1.0 + linalg::norm(&x)) {
                stalled += 1;
                if stalled >= 2 || !accepted {
                    break;
                }
            } else {
                stalled = 0;
            }
        }
        Ok(Projection { converged: rnorm < opts.tol_residual, point: x, residual: rnorm, iterations: it })
    }

    /// Orthonormal tangent basis (columns) at a regular point.
    pub fn tangent_basis(&self, x: &[f64]) -> Result<DMatrix<f64>, GeomError> {
        let j = self.jacobian(x)?;
        let (basis, d) = linalg::null_space(&j, linalg::RANK_TOL);
        if let Some(dim) = self.expected_dim {
            let expected = self.ambient_dim() - dim;
            if d.rank != expected {
                return Err(GeomError::NotRegular { rank: d.rank, expected, point: x.to_vec() });
            }
        }
        Ok(basis)
    }

    /// Dimension of the zero set near `x` measured by projecting small random
    /// perturbations back onto it and ranking the displacement cloud.
    pub fn local_dimension(&self, x: &[f64], rng: &mut SampleRng, radius: f64) -> Result<RankDecision, GeomError> {
        let n = self.ambient_dim();
        let opts = SolveOptions { tol_residual: 1e-12, ..SolveOptions::default() };
        let scale = 1.0 + linalg::norm(x);
        let r = radius * scale;
        let mut cols: Vec<f64> = Vec::new();
        let mut count = 0;
        let mut attempts = 0;
        while count < n + 4 && attempts < 4 * (n + 4) {
            attempts += 1;
            let dir = rng::unit_vector(rng, n);
            let seed: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + r * d).collect();
            let p = self.project(&seed, &opts)?;
            if !p.converged || linalg::dist(&p.point, x) > 100.0 * r || !self.in_domain(&p.point) {
                continue;
            }
            cols.extend(p.point.iter().zip(x).map(|(a, b)| a - b));
            count += 1;
        }
        if count == 0 {
            return Err(GeomError::NotRegular { rank: 0, expected: 0, point: x.to_vec() });
        }
        let m = DMatrix::from_column_slice(n, count, &cols);
        Ok(linalg::rank_decision_abs(&m, 1e-3 * r))
    }

    /// Projects every seed; keeps converged in-domain points, fiber-normalized
    /// when conic, deduplicated at `dedup_tol` and sorted lexicographically.
    pub fn solve_points(&self, seeds: &[Vec<f64>], opts: &SolveOptions, dedup_tol: f64) -> Result<SolveOutcome, GeomError> {
        let mut pts = Vec::new();
        let mut best = f64::INFINITY;
        for s in seeds {
            if s.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let p = self.project(s, opts)?;
            best = best.min(p.residual);
            if !p.converged {
                continue;
            }
            let mut q = p.point;
            if self.is_conic() {
                self.normalize_fiber(&mut q);
                if self.residual_norm(&q).map_or(true, |r| r > opts.tol_residual * 1e3) {
                    continue;
                }
            }
            if self.in_domain(&q) {
                pts.push(q);
            }
        }
        Ok(SolveOutcome { attempts: seeds.len(), best_residual: best, points: dedup_sorted(pts, dedup_tol) })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    pub points: Vec<Vec<f64>>,
    pub attempts: usize,
    pub best_residual: f64,
}

/// Lexicographic sort followed by removal of points within `tol` of a kept one.
pub fn dedup_sorted(mut pts: Vec<Vec<f64>>, tol: f64) -> Vec<Vec<f64>> {
    pts.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(pts.len());
    for p in pts {
        if !out.iter().any(|q| linalg::dist(q, &p) < tol) {
            out.push(p);
        }
    }
    out
}

/// Builds `x_slot - value` style expressions; convenience for callers.
pub fn slot_minus(layout: &Arc<BlockLayout>, slot: usize, value: f64) -> Expression {
    Expression::from_node(
        Node::Sub(alloc::boxed::Box::new(Node::Var(slot)), alloc::boxed::Box::new(Node::Const(value))),
        layout,
    )
}

/// Evaluates a list of expressions into a matrix row per expression and
/// a column per slot of `slots`.
pub fn jacobian_of(exprs: &[Expression], slots: &[usize], x: &[f64]) -> Result<DMatrix<f64>, GeomError> {
    let mut m = DMatrix::zeros(exprs.len(), slots.len());
    for (i, e) in exprs.iter().enumerate() {
        for (j, &s) in slots.iter().enumerate() {
            m[(i, j)] = e.differentiate(s).evaluate(x)?;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests;
