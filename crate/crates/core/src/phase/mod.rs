//! Phase functions: validation, critical sets, the clean-phase excess and the
//! parametrization `γ_φ(x, x′, θ) = (x, ∂_xφ; x′, −∂_{x′}φ)` of the Lagrangian.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::expr::{check_homogeneity, BlockLayout, CompiledSet, EvalError, Expression, HomogeneityReport};
use crate::geom::{
    symplectic_form_value, CleanOptions, ConstraintSubmanifold, GeomError, SolveOptions, SymplecticSpace,
};
use crate::linalg::{self, RANK_TOL};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub enum PhaseError {
    Eval(EvalError),
    Geom(GeomError),
    Layout(String),
    NotHomogeneous { residual: f64, sample: Vec<f64> },
    VanishingGradient { point: Vec<f64> },
    EmptyCriticalSet { attempts: usize, best_residual: f64 },
    NotClean { ranks: (usize, usize), witnesses: (Vec<f64>, Vec<f64>) },
    InconsistentExcess { rank_based: i64, dim_based: i64, point: Vec<f64> },
    NotCritical { residual: f64, point: Vec<f64> },
    ZeroSection { point: Vec<f64> },
    NonConstantRank { expected: usize, found: usize, point: Vec<f64> },
}

impl fmt::Display for PhaseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseError::Eval(e) => write!(f, "{e}"),
            PhaseError::Geom(e) => write!(f, "{e}"),
            PhaseError::Layout(m) => write!(f, "phase layout: {m}"),
            PhaseError::NotHomogeneous { residual, sample } => {
                write!(f, "phase is not 1-homogeneous in θ: residual {residual:e} at {sample:?}")
            }
            PhaseError::VanishingGradient { point } => write!(f, "full gradient of the phase vanishes at {point:?}"),
            PhaseError::EmptyCriticalSet { attempts, best_residual } => write!(
                f,
                "no critical points found from {attempts} seeds (best residual {best_residual:e})"
            ),
            PhaseError::NotClean { ranks, witnesses } => write!(
                f,
                "not a clean phase: rank {} at {:?} but {} at {:?}",
                ranks.0, witnesses.0, ranks.1, witnesses.1
            ),
            PhaseError::InconsistentExcess { rank_based, dim_based, point } => write!(
                f,
                "inconsistent excess: {rank_based} from the rank, {dim_based} from the dimension at {point:?}"
            ),
            PhaseError::NotCritical { residual, point } => {
                write!(f, "point is not critical (|∂_θφ| = {residual:e}) at {point:?}")
            }
            PhaseError::ZeroSection { point } => write!(f, "zero-section hit at {point:?}"),
            PhaseError::NonConstantRank { expected, found, point } => {
                write!(f, "fibration rank {found} differs from {expected} at {point:?}")
            }
        }
    }
}

impl core::error::Error for PhaseError {}

impl From<EvalError> for PhaseError {
    fn from(e: EvalError) -> Self {
        PhaseError::Eval(e)
    }
}

impl From<GeomError> for PhaseError {
    fn from(e: GeomError) -> Self {
        match e {
            GeomError::Eval(e) => PhaseError::Eval(e),
            e => PhaseError::Geom(e),
        }
    }
}

/// A real phase `φ(z, z′, θ)`, 1-homogeneous in θ on an open cone.
#[derive(Clone, Debug)]
pub struct PhaseFunction {
    phi: Expression,
    base: Vec<usize>,
    primed: Vec<usize>,
    theta: Vec<usize>,
    domain: Vec<Expression>,
    grad_theta: Vec<Expression>,
    gamma: Vec<Expression>,
    grad_fns: CompiledSet,
    theta_jac_fns: CompiledSet,
    gamma_fns: CompiledSet,
    gamma_jac_fns: CompiledSet,
    homogeneity: Option<HomogeneityReport>,
}

fn block_slots(layout: &BlockLayout, names: &[&str]) -> Result<Vec<usize>, PhaseError> {
    let mut out = Vec::new();
    for n in names {
        let r = layout.range(n).ok_or_else(|| PhaseError::Layout(alloc::format!("missing block `{n}`")))?;
        out.extend(r);
    }
    Ok(out)
}

impl PhaseFunction {
    /// `base` and `primed` list the blocks of each base factor in chart order;
    /// `domain` holds strict inequalities `d > 0` describing the cone Γ.
    pub fn new(
        phi: Expression,
        base: &[&str],
        primed: &[&str],
        theta: &str,
        domain: Vec<Expression>,
    ) -> Result<Self, PhaseError> {
        let layout = phi.layout().clone();
        let base = block_slots(&layout, base)?;
        let primed = block_slots(&layout, primed)?;
        let theta = block_slots(&layout, &[theta])?;
        if base.len() != primed.len() {
            return Err(PhaseError::Layout("base factors must have equal dimension".into()));
        }
        if base.len() + primed.len() + theta.len() != layout.total_dim() {
            return Err(PhaseError::Layout("layout must consist of the base, primed base and fiber blocks".into()));
        }
        if let Some(p) = phi.referenced_params().into_iter().find(|p| !phi.params().contains_key(p)) {
            return Err(PhaseError::Eval(EvalError::UnboundParameter(p)));
        }
        let phi = phi.bind_params();
        let domain: Vec<Expression> = domain.iter().map(|d| d.bind_params()).collect();
        let grad_theta = phi.gradient(&theta);
        let mut gamma = Vec::with_capacity(2 * (base.len() + primed.len()));
        gamma.extend(base.iter().map(|&s| Expression::var(s, &layout)));
        gamma.extend(base.iter().map(|&s| phi.differentiate(s)));
        gamma.extend(primed.iter().map(|&s| Expression::var(s, &layout)));
        gamma.extend(primed.iter().map(|&s| -phi.differentiate(s)));
        let n = layout.total_dim();
        let theta_jac: Vec<Expression> =
            grad_theta.iter().flat_map(|g| (0..n).map(move |s| g.differentiate(s))).collect();
        let gamma_jac: Vec<Expression> =
            gamma.iter().flat_map(|g| (0..n).map(move |s| g.differentiate(s))).collect();
        Ok(Self {
            grad_fns: CompiledSet::new(&grad_theta)?,
            theta_jac_fns: CompiledSet::new(&theta_jac)?,
            gamma_fns: CompiledSet::new(&gamma)?,
            gamma_jac_fns: CompiledSet::new(&gamma_jac)?,
            phi,
            base,
            primed,
            theta,
            domain,
            grad_theta,
            gamma,
            homogeneity: None,
        })
    }

    pub fn phi(&self) -> &Expression {
        &self.phi
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        self.phi.layout()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    /// Dimension of each base factor.
    pub fn base_dim(&self) -> usize {
        self.base.len()
    }

    pub fn base_slots(&self) -> &[usize] {
        &self.base
    }

    pub fn primed_slots(&self) -> &[usize] {
        &self.primed
    }

    pub fn theta_slots(&self) -> &[usize] {
        &self.theta
    }

    pub fn domain(&self) -> &[Expression] {
        &self.domain
    }

    pub fn grad_theta(&self) -> &[Expression] {
        &self.grad_theta
    }

    /// Components of `γ_φ` in the order `(z, ζ, z′, ζ′)`.
    pub fn gamma_exprs(&self) -> &[Expression] {
        &self.gamma
    }

    pub fn homogeneity(&self) -> Option<&HomogeneityReport> {
        self.homogeneity.as_ref()
    }

    pub fn theta_norm(&self, c: &[f64]) -> f64 {
        libm::sqrt(self.theta.iter().map(|&s| c[s] * c[s]).sum())
    }

    /// Membership in the cone Γ (strict inequalities, θ ≠ 0, away from the
    /// singular loci of φ).
    pub fn in_domain(&self, c: &[f64]) -> bool {
        if c.len() != self.layout().total_dim() || c.iter().any(|v| !v.is_finite()) {
            return false;
        }
        if self.theta_norm(c) == 0.0 {
            return false;
        }
        self.domain.iter().all(|d| matches!(d.evaluate(c), Ok(v) if v > 0.0))
            && matches!(self.phi.singular_margin(c), Ok(m) if m > 1e-9)
    }

    /// Euler identity and scaling in θ plus the nonvanishing full gradient on
    /// `samples`; returns the smallest normalized gradient norm.
    pub fn validate(&mut self, samples: &[Vec<f64>], tol: f64) -> Result<f64, PhaseError> {
        let block = self.layout().locate(self.theta[0]).map(|(b, _)| b.name.clone()).unwrap_or_default();
        let report = check_homogeneity(&self.phi, &block, 1.0, samples, tol)?;
        if !report.passed {
            let k = report.worst_sample.unwrap_or(0);
            return Err(PhaseError::NotHomogeneous { residual: report.worst_residual(), sample: samples[k].clone() });
        }
        self.homogeneity = Some(report);
        let n = self.layout().total_dim();
        let grad = self.phi.gradient(&(0..n).collect::<Vec<_>>());
        let mut margin = f64::INFINITY;
        for c in samples {
            let mut g2 = 0.0;
            for g in &grad {
                let v = g.evaluate(c)?;
                g2 += v * v;
            }
            let m = libm::sqrt(g2) / (1.0 + self.theta_norm(c));
            if m == 0.0 {
                return Err(PhaseError::VanishingGradient { point: c.clone() });
            }
            margin = margin.min(m);
        }
        Ok(margin)
    }

    pub fn grad_theta_at(&self, c: &[f64]) -> Result<Vec<f64>, PhaseError> {
        Ok(self.grad_fns.eval(c)?)
    }

    /// The `N × (2n + N)` matrix `(∂²_{θz}φ ∂²_{θz′}φ ∂²_{θθ}φ)` in layout order.
    pub fn theta_matrix(&self, c: &[f64]) -> Result<DMatrix<f64>, PhaseError> {
        let n = self.layout().total_dim();
        Ok(DMatrix::from_row_slice(self.theta.len(), n, &self.theta_jac_fns.eval(c)?))
    }

    /// `γ_φ(c)` without the criticality and zero-section checks.
    pub fn gamma_at(&self, c: &[f64]) -> Result<Vec<f64>, PhaseError> {
        Ok(self.gamma_fns.eval(c)?)
    }

    pub fn gamma_jacobian(&self, c: &[f64]) -> Result<DMatrix<f64>, PhaseError> {
        let n = self.layout().total_dim();
        Ok(DMatrix::from_row_slice(self.gamma.len(), n, &self.gamma_jac_fns.eval(c)?))
    }

    /// Covector part `(ζ, ζ′)` of a cotangent point in `(z, ζ, z′, ζ′)` order.
    pub fn covector_norm(&self, image: &[f64]) -> f64 {
        let k = self.base.len();
        linalg::norm(&[&image[k..2 * k], &image[3 * k..4 * k]].concat())
    }

    /// `γ_φ` at a critical point, rejecting non-critical points and the zero section.
    pub fn parametrize(&self, c: &[f64], tol: f64) -> Result<Vec<f64>, PhaseError> {
        let res = linalg::norm(&self.grad_theta_at(c)?);
        if res > tol * (1.0 + self.theta_norm(c)) {
            return Err(PhaseError::NotCritical { residual: res, point: c.to_vec() });
        }
        let img = self.gamma_at(c)?;
        if self.covector_norm(&img) <= tol * (1.0 + self.theta_norm(c)) {
            return Err(PhaseError::ZeroSection { point: c.to_vec() });
        }
        Ok(img)
    }

    /// `C_φ = {∂_θφ = 0}` as a conic constraint set on the cone Γ.
    pub fn critical_submanifold(&self) -> Result<ConstraintSubmanifold, PhaseError> {
        Ok(ConstraintSubmanifold::new(self.layout(), self.grad_theta.clone())?
            .conic(self.theta.clone())
            .with_guards(alloc::vec![self.phi.clone()])
            .with_domain(self.domain.clone())?)
    }

    /// Substitutes `values` for the given slots, producing a phase on a new
    /// layout whose slots are enumerated by `keep` (old slot per new slot).
    pub fn restrict(
        &self,
        layout: &Arc<BlockLayout>,
        keep: &[usize],
        fixed: &[(usize, f64)],
        base: &[&str],
        primed: &[&str],
        theta: &str,
    ) -> Result<Self, PhaseError> {
        let map = |old: usize| {
            if let Some(&(_, v)) = fixed.iter().find(|(s, _)| *s == old) {
                crate::expr::Node::Const(v)
            } else {
                let new = keep.iter().position(|&k| k == old).expect("slot neither kept nor fixed");
                crate::expr::Node::Var(new)
            }
        };
        let phi = self.phi.substitute(layout, &map).simplified();
        let domain = self.domain.iter().map(|d| d.substitute(layout, &map).simplified()).collect();
        Self::new(phi, base, primed, theta, domain)
    }
}

/// Seeds: θ-directions on a quasi-uniform sphere grid, one base point per
/// direction drawn from `base_box`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedSpec {
    pub base_box: (f64, f64),
    pub theta_directions: usize,
    pub seed: u64,
}

impl Default for SeedSpec {
    fn default() -> Self {
        Self { base_box: (-1.0, 1.0), theta_directions: 96, seed: 1 }
    }
}

/// Unit directions in `R^n`: ±1 for n = 1, an offset circle grid for n = 2,
/// a Fibonacci sphere for n = 3 and seeded Gaussian directions beyond.
pub fn sphere_grid(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => (0..count).map(|k| alloc::vec![if k % 2 == 0 { 1.0 } else { -1.0 }]).collect(),
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * PI * (k as f64 + 0.37) / count as f64;
                alloc::vec![libm::cos(a), libm::sin(a)]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - libm::sqrt(5.0));
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = libm::sqrt(1.0 - z * z);
                    let a = golden * k as f64;
                    alloc::vec![r * libm::cos(a), r * libm::sin(a), z]
                })
                .collect()
        }
        _ => {
            let mut r = rng::seeded(seed ^ 0x9e37_79b9);
            (0..count).map(|_| rng::unit_vector(&mut r, n)).collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalOptions {
    pub seeds: SeedSpec,
    pub solve: SolveOptions,
    /// Distance below which θ-normalized points are merged.
    pub dedup_tol: f64,
    pub clean: CleanOptions,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        Self { seeds: SeedSpec::default(), solve: SolveOptions::default(), dedup_tol: 1e-6, clean: CleanOptions::default() }
    }
}

/// Converged, deduplicated samples of `C_φ` with rank and excess certificates.
#[derive(Clone, Debug)]
pub struct CriticalManifold {
    /// Points with `|θ| = 1`, sorted lexicographically.
    pub points: Vec<Vec<f64>>,
    /// `2n + N − rank ∇(∂_θφ)`.
    pub dim: usize,
    pub excess: usize,
    pub rank_of_matrix: usize,
    /// Smallest singular-value gap among the rank decisions.
    pub rank_gap: f64,
    pub marginal: bool,
    /// Orthonormal tangent bases of `C_φ` per point.
    pub tangent_frames: Vec<DMatrix<f64>>,
    /// Orthonormal bases of `ker dγ_φ ∩ T C_φ` per point.
    pub fibration_frames: Vec<DMatrix<f64>>,
    pub attempts: usize,
}

impl CriticalManifold {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Seeds the critical equations, projects with Gauss–Newton and certifies
/// the constant rank of `∇(∂_θφ)` on the converged points.
pub fn solve_critical_set(phase: &PhaseFunction, opts: &CriticalOptions) -> Result<CriticalManifold, PhaseError> {
    let sub = phase.critical_submanifold()?;
    let n = phase.layout().total_dim();
    let mut r = rng::seeded(opts.seeds.seed);
    let dirs = sphere_grid(phase.n_theta(), opts.seeds.theta_directions, opts.seeds.seed);
    let (lo, hi) = opts.seeds.base_box;
    let seeds: Vec<Vec<f64>> = dirs
        .iter()
        .map(|d| {
            let mut s: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, lo, hi)).collect();
            for (&slot, v) in phase.theta_slots().iter().zip(d) {
                s[slot] = *v;
            }
            s
        })
        .collect();
    let found = sub.solve_points(&seeds, &opts.solve, opts.dedup_tol)?;
    if found.points.is_empty() {
        return Err(PhaseError::EmptyCriticalSet { attempts: found.attempts, best_residual: found.best_residual });
    }
    certify_critical_points(phase, found.points, found.attempts)
}

/// Rank, tangent and fibration certificates for given points of `C_φ`.
pub fn certify_critical_points(
    phase: &PhaseFunction,
    points: Vec<Vec<f64>>,
    attempts: usize,
) -> Result<CriticalManifold, PhaseError> {
    let n = phase.layout().total_dim();
    let nt = phase.n_theta();
    let mut rank_first: Option<(usize, Vec<f64>)> = None;
    let mut gap = f64::INFINITY;
    let mut tangents = Vec::with_capacity(points.len());
    let mut fibers = Vec::with_capacity(points.len());
    for c in &points {
        let m = phase.theta_matrix(c)?;
        let (tangent, d) = linalg::null_space(&m, RANK_TOL);
        gap = gap.min(d.gap);
        match &rank_first {
            None => rank_first = Some((d.rank, c.clone())),
            Some((r0, w0)) if *r0 != d.rank => {
                return Err(PhaseError::NotClean { ranks: (*r0, d.rank), witnesses: (w0.clone(), c.clone()) });
            }
            _ => {}
        }
        let pushed = phase.gamma_jacobian(c)? * &tangent;
        let (ker, _) = linalg::null_space(&pushed, RANK_TOL);
        fibers.push(&tangent * ker);
        tangents.push(tangent);
    }
    let rank = rank_first.map_or(0, |(r, _)| r);
    let dim = n - rank;
    let excess = nt - rank;
    for (c, f) in points.iter().zip(&fibers) {
        if f.ncols() != excess {
            return Err(PhaseError::NonConstantRank { expected: dim - excess, found: dim - f.ncols(), point: c.clone() });
        }
    }
    Ok(CriticalManifold {
        points,
        dim,
        excess,
        rank_of_matrix: rank,
        rank_gap: gap,
        marginal: gap < linalg::MARGINAL_GAP,
        tangent_frames: tangents,
        fibration_frames: fibers,
        attempts,
    })
}

/// Excess certificate: the rank-based value `N − rank ∇(∂_θφ)` and the sampled
/// local dimension of `C_φ` minus `2·dim base`, which must agree.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcessCertificate {
    pub excess: usize,
    pub rank_based: usize,
    pub dim_based: usize,
    pub sampled_dim: usize,
    pub samples: usize,
}

pub fn excess_of(phase: &PhaseFunction, crit: &CriticalManifold, clean: &CleanOptions) -> Result<ExcessCertificate, PhaseError> {
    if crit.is_empty() {
        return Err(PhaseError::EmptyCriticalSet { attempts: crit.attempts, best_residual: f64::NAN });
    }
    let sub = phase.critical_submanifold()?;
    let mut r = rng::seeded(clean.seed);
    let base_total = 2 * phase.base_dim();
    let rank_based = phase.n_theta() - crit.rank_of_matrix;
    let mut sampled = None;
    for c in &crit.points {
        let ld = sub.local_dimension(c, &mut r, clean.local_radius)?.rank;
        let dim_based = ld as i64 - base_total as i64;
        if dim_based != rank_based as i64 {
            return Err(PhaseError::InconsistentExcess { rank_based: rank_based as i64, dim_based, point: c.clone() });
        }
        sampled = Some(ld);
    }
    let sampled_dim = sampled.unwrap_or(crit.dim);
    Ok(ExcessCertificate {
        excess: rank_based,
        rank_based,
        dim_based: sampled_dim - base_total,
        sampled_dim,
        samples: crit.points.len(),
    })
}

/// `γ_φ`-images of a critical set with pushed-forward tangent frames.
#[derive(Clone, Debug)]
pub struct LagrangianSampleSet {
    /// Cotangent points in `(z, ζ, z′, ζ′)` order.
    pub points: Vec<Vec<f64>>,
    /// Orthonormal bases of `T Λ` (columns).
    pub tangent_frames: Vec<DMatrix<f64>>,
    pub fiber_frames: Vec<DMatrix<f64>>,
    pub sources: Vec<Vec<f64>>,
    /// Largest `|ω(u, v)|` over tangent-frame pairs.
    pub isotropy: f64,
    /// Smallest covector norm.
    pub min_covector: f64,
    pub conic: bool,
}

pub fn lagrangian_samples(phase: &PhaseFunction, crit: &CriticalManifold, tol: f64) -> Result<LagrangianSampleSet, PhaseError> {
    let expected = crit.dim - crit.excess;
    let space = SymplecticSpace::Product { n: phase.base_dim() };
    let mut out = LagrangianSampleSet {
        points: Vec::with_capacity(crit.points.len()),
        tangent_frames: Vec::with_capacity(crit.points.len()),
        fiber_frames: crit.fibration_frames.clone(),
        sources: crit.points.clone(),
        isotropy: 0.0,
        min_covector: f64::INFINITY,
        conic: true,
    };
    for (c, t) in crit.points.iter().zip(&crit.tangent_frames) {
        let img = phase.parametrize(c, tol)?;
        out.min_covector = out.min_covector.min(phase.covector_norm(&img));
        let pushed = phase.gamma_jacobian(c)? * t;
        let (frame, d) = linalg::column_space(&pushed, RANK_TOL);
        if d.rank != expected {
            return Err(PhaseError::NonConstantRank { expected, found: d.rank, point: c.clone() });
        }
        out.isotropy = out.isotropy.max(max_isotropy(space, &frame)?);
        out.points.push(img);
        out.tangent_frames.push(frame);
    }
    Ok(out)
}

/// Largest `|ω(u_i, u_j)|` over column pairs of `frame`.
pub fn max_isotropy(space: SymplecticSpace, frame: &DMatrix<f64>) -> Result<f64, GeomError> {
    let cols: Vec<Vec<f64>> = (0..frame.ncols()).map(|j| frame.column(j).iter().copied().collect()).collect();
    let mut worst = 0.0f64;
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            worst = worst.max(symplectic_form_value(space, &cols[i], &cols[j])?.abs());
        }
    }
    Ok(worst)
}

/// Name of the block holding slot `s`, for diagnostics.
pub fn slot_name(layout: &BlockLayout, s: usize) -> String {
    layout.locate(s).map_or_else(|| s.to_string(), |(b, i)| alloc::format!("{}[{i}]", b.name))
}

/// A complex amplitude `a = re + i·im` on a phase layout.
#[derive(Clone, Debug)]
pub struct Amplitude {
    re: Expression,
    im: Option<Expression>,
    fns: CompiledSet,
}

impl Amplitude {
    pub fn new(re: Expression, im: Option<Expression>) -> Result<Self, PhaseError> {
        let re = re.bind_params();
        let im = im.map(|e| e.bind_params()).filter(|e| !e.is_zero());
        let exprs: Vec<Expression> = core::iter::once(re.clone()).chain(im.clone()).collect();
        Ok(Self { fns: CompiledSet::new(&exprs)?, re, im })
    }

    pub fn real(re: Expression) -> Result<Self, PhaseError> {
        Self::new(re, None)
    }

    pub fn re(&self) -> &Expression {
        &self.re
    }

    pub fn im(&self) -> Option<&Expression> {
        self.im.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_none()
    }

    pub fn eval(&self, c: &[f64]) -> Result<Complex64, PhaseError> {
        let v = self.fns.eval(c)?;
        Ok(Complex64::new(v[0], v.get(1).copied().unwrap_or(0.0)))
    }
}

#[cfg(test)]
mod tests;
