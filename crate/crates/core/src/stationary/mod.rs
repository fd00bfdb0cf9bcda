//! Stationary phase for the traced kernel: canonical coordinates `w`, the
//! generating function `S(w)`, the splitting `θ = (θ′, θ″)` that eliminates
//! the excess, stationary points of the big phase and the leading amplitude
//! `b₀(w)`.

mod fiber;

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use nalgebra::{DMatrix, DVector};

pub use fiber::{log_log_slope, AmplitudeResult, FiberExtent, FiberTrace};

use crate::expr::{BlockLayout, CompiledExpr, CompiledSet, EvalError, Expression};
use crate::linalg::{self, RANK_TOL};
use crate::phase::{CriticalManifold, PhaseError, PhaseFunction};
use crate::trace::TracedLagrangian;

#[derive(Clone, Debug, PartialEq)]
pub enum StationaryError {
    Phase(PhaseError),
    Chart(String),
    NotAChart { rank: usize, expected: usize, point: Vec<f64> },
    CanonicalEquations { residual: f64, point: Vec<f64> },
    GeneratingNotHomogeneous { residual: f64, point: Vec<f64> },
    GeneratingMismatch { user: f64, computed: f64, w: Vec<f64> },
    FiberFrames(String),
    ThetaVanishes { ratio: f64, point: Vec<f64> },
    NoFiberPoint { attempts: usize, best_residual: f64 },
    NewtonDivergence { residual: f64, iterations: usize },
    OutOfDomain { point: Vec<f64> },
    NotInFiber { residual: f64 },
    DegenerateHessian { det: f64, min_eigenvalue: f64, max_eigenvalue: f64 },
    NonzeroCriticalValue { value: f64 },
    SignatureChange { center: i32, found: i32, theta_dd: Vec<f64> },
    UnboundedFiber { reached: f64, direction: Vec<f64> },
    Quadrature { error: f64, value: f64 },
    UnsupportedExcess(usize),
}

impl fmt::Display for StationaryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use StationaryError::*;
        match self {
            Phase(e) => write!(f, "{e}"),
            Chart(m) => write!(f, "canonical chart: {m}"),
            NotAChart { rank, expected, point } => write!(
                f,
                "not a chart; choose different index sets (w-differential has rank {rank} < {expected} at {point:?})"
            ),
            CanonicalEquations { residual, point } => {
                write!(f, "S(w) violates the canonical equations: residual {residual:e} at {point:?}")
            }
            GeneratingNotHomogeneous { residual, point } => {
                write!(f, "S(w) is not 1-homogeneous: Euler residual {residual:e} at {point:?}")
            }
            GeneratingMismatch { user, computed, w } => {
                write!(f, "user S(w) = {user} disagrees with the critical value {computed} at w = {w:?}")
            }
            FiberFrames(m) => write!(f, "fiber frames: {m}"),
            ThetaVanishes { ratio, point } => write!(
                f,
                "θ′ vanishes on the critical set (|θ′|/|θ| = {ratio:e} at {point:?}); neighbourhood too large, shrink the chart"
            ),
            NoFiberPoint { attempts, best_residual } => {
                write!(f, "no point of F_w found from {attempts} seeds (best residual {best_residual:e})")
            }
            NewtonDivergence { residual, iterations } => {
                write!(f, "Newton diverged after {iterations} iterations (|∇ψ| = {residual:e})")
            }
            OutOfDomain { point } => write!(f, "stationary point {point:?} leaves the phase domain"),
            NotInFiber { residual } => write!(f, "stationary point is not on F_w (|∂_θφ| = {residual:e})"),
            DegenerateHessian { det, min_eigenvalue, max_eigenvalue } => write!(
                f,
                "degenerate Hessian: det {det:e}, eigenvalues in [{min_eigenvalue:e}, {max_eigenvalue:e}]"
            ),
            NonzeroCriticalValue { value } => write!(f, "critical value {value:e} is not zero"),
            SignatureChange { center, found, theta_dd } => {
                write!(f, "signature changes from {center} to {found} at θ″ = {theta_dd:?}")
            }
            UnboundedFiber { reached, direction } => write!(
                f,
                "unbounded fiber: continuation reached |θ″| = {reached} along {direction:?} (condition 2 fails)"
            ),
            Quadrature { error, value } => write!(f, "fiber quadrature did not converge: {value} ± {error:e}"),
            UnsupportedExcess(e) => write!(f, "fiber integrals of dimension {e} > 2 are not supported"),
        }
    }
}

impl core::error::Error for StationaryError {}

impl From<PhaseError> for StationaryError {
    fn from(e: PhaseError) -> Self {
        StationaryError::Phase(e)
    }
}

impl From<EvalError> for StationaryError {
    fn from(e: EvalError) -> Self {
        StationaryError::Phase(PhaseError::Eval(e))
    }
}

impl StationaryError {
    /// Failures that mark the edge of `F_w` during continuation.
    fn is_boundary(&self) -> bool {
        use StationaryError::*;
        matches!(
            self,
            NewtonDivergence { .. } | OutOfDomain { .. } | ThetaVanishes { .. } | NotInFiber { .. } | Phase(PhaseError::Eval(_))
        )
    }
}

/// Choice of the `2π` power in front of the fiber integral.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PrefactorMode {
    /// `(2π)^{−(dim M + e)/2}`
    #[default]
    Derived,
    /// `(2π)^{−(dim M + N − e)/2}`
    Paper,
}

impl PrefactorMode {
    pub fn name(self) -> &'static str {
        match self {
            PrefactorMode::Derived => "derived",
            PrefactorMode::Paper => "paper",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "derived" => Some(PrefactorMode::Derived),
            "paper" => Some(PrefactorMode::Paper),
            _ => None,
        }
    }

    pub fn exponent(self, dim_m: usize, n_theta: usize, excess: usize) -> f64 {
        match self {
            PrefactorMode::Derived => -((dim_m + excess) as f64) / 2.0,
            PrefactorMode::Paper => -((dim_m + n_theta) as f64 - excess as f64) / 2.0,
        }
    }

    pub fn factor(self, dim_m: usize, n_theta: usize, excess: usize) -> f64 {
        libm::pow(2.0 * PI, self.exponent(dim_m, n_theta, excess))
    }
}

/// Coordinates `w = (x_I, p_Ī; x′_{I′}, p′_{Ī′})` on `T*(X × X)` and an
/// optional user generating function `S(w)` on the layout [`Self::w_layout`].
#[derive(Clone, Debug)]
pub struct CanonicalChart {
    k: usize,
    in_i: Vec<bool>,
    in_ip: Vec<bool>,
    generating: Option<Expression>,
    generating_grad: Vec<Expression>,
}

impl CanonicalChart {
    /// `i` and `ip` list the 1-based indices whose position coordinate is kept.
    pub fn new(k: usize, i: &[usize], ip: &[usize]) -> Result<Self, StationaryError> {
        let mask = |set: &[usize]| -> Result<Vec<bool>, StationaryError> {
            let mut m = alloc::vec![false; k];
            for &j in set {
                if j == 0 || j > k {
                    return Err(StationaryError::Chart(format!("index {j} outside 1..={k}")));
                }
                m[j - 1] = true;
            }
            Ok(m)
        };
        Ok(Self { k, in_i: mask(i)?, in_ip: mask(ip)?, generating: None, generating_grad: Vec::new() })
    }

    /// A single block `w` of dimension `2 dim X`.
    pub fn w_layout(k: usize) -> Arc<BlockLayout> {
        Arc::new(BlockLayout::new(&[("w", 2 * k)]).expect("valid layout"))
    }

    pub fn with_generating_function(mut self, s: Expression) -> Result<Self, StationaryError> {
        if s.layout().total_dim() != 2 * self.k {
            return Err(StationaryError::Chart(format!("S(w) must live on a layout of dimension {}", 2 * self.k)));
        }
        let s = s.bind_params();
        self.generating_grad = s.gradient(&(0..2 * self.k).collect::<Vec<_>>());
        self.generating = Some(s);
        Ok(self)
    }

    pub fn dim_x(&self) -> usize {
        self.k
    }

    /// `(I, I′)` as 1-based index lists.
    pub fn index_sets(&self) -> (Vec<usize>, Vec<usize>) {
        let idx = |m: &[bool]| m.iter().enumerate().filter(|(_, b)| **b).map(|(j, _)| j + 1).collect();
        (idx(&self.in_i), idx(&self.in_ip))
    }

    /// 0-based indices of `Ī`.
    pub fn bar_i(&self) -> Vec<usize> {
        (0..self.k).filter(|&j| !self.in_i[j]).collect()
    }

    /// 0-based indices of `Ī′`.
    pub fn bar_ip(&self) -> Vec<usize> {
        (0..self.k).filter(|&j| !self.in_ip[j]).collect()
    }

    /// Positions of the `w`-coordinates in a `(x, p, x′, p′)` point.
    pub fn w_positions(&self) -> Vec<usize> {
        let k = self.k;
        let mut out: Vec<usize> = (0..k).map(|j| if self.in_i[j] { j } else { k + j }).collect();
        out.extend((0..k).map(|j| if self.in_ip[j] { 2 * k + j } else { 3 * k + j }));
        out
    }

    /// Momentum-type (fiber) coordinates of `w`.
    pub fn is_momentum(&self, j: usize) -> bool {
        if j < self.k {
            !self.in_i[j]
        } else {
            !self.in_ip[j - self.k]
        }
    }

    pub fn w_names(&self) -> Vec<String> {
        let k = self.k;
        let mut out: Vec<String> =
            (0..k).map(|j| format!("{}{}", if self.in_i[j] { "x" } else { "p" }, j + 1)).collect();
        out.extend((0..k).map(|j| format!("{}{}", if self.in_ip[j] { "xp" } else { "pp" }, j + 1)));
        out
    }

    pub fn w_of(&self, point: &[f64]) -> Vec<f64> {
        self.w_positions().iter().map(|&p| point[p]).collect()
    }

    /// Conic ray `λ·w`: only the momentum-type coordinates scale.
    pub fn scale(&self, w: &[f64], lambda: f64) -> Vec<f64> {
        w.iter().enumerate().map(|(j, v)| if self.is_momentum(j) { lambda * v } else { *v }).collect()
    }

    pub fn generating(&self) -> Option<&Expression> {
        self.generating.as_ref()
    }

    pub fn user_s(&self, w: &[f64]) -> Result<Option<f64>, StationaryError> {
        Ok(match &self.generating {
            Some(s) => Some(s.evaluate(w)?),
            None => None,
        })
    }
}

/// Outcome of [`fit_canonical_chart`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChartFit {
    /// Smallest normalized singular value of the `w`-differential on frames.
    pub min_singular: f64,
    pub samples: usize,
    pub canonical_residual: Option<f64>,
    pub euler_residual: Option<f64>,
}

/// Checks that `w` is a chart on the traced Lagrangian and, when the chart
/// carries `S`, that the canonical equations and Euler's identity hold.
pub fn fit_canonical_chart(traced: &TracedLagrangian, chart: &CanonicalChart) -> Result<ChartFit, StationaryError> {
    let k = chart.k;
    if traced.points.first().is_some_and(|p| p.len() != 4 * k) {
        return Err(StationaryError::Chart(format!("traced points do not have dimension {}", 4 * k)));
    }
    let pos = chart.w_positions();
    let mut min_singular = f64::INFINITY;
    for (v, frame) in traced.points.iter().zip(&traced.frames) {
        let sel = DMatrix::from_fn(2 * k, frame.ncols(), |i, j| frame[(pos[i], j)]);
        let d = linalg::rank_decision(&sel, RANK_TOL);
        let smin = if d.rank == 2 * k { d.singular_values[2 * k - 1] / d.singular_values[0].max(1e-300) } else { 0.0 };
        if d.rank < 2 * k || frame.ncols() < 2 * k || smin < 1e-6 {
            return Err(StationaryError::NotAChart { rank: d.rank, expected: 2 * k, point: v.clone() });
        }
        min_singular = min_singular.min(smin);
    }
    let mut fit = ChartFit { min_singular, samples: traced.points.len(), canonical_residual: None, euler_residual: None };
    let Some(s) = &chart.generating else {
        return Ok(fit);
    };
    let (mut canon, mut euler) = (0.0f64, 0.0f64);
    for v in &traced.points {
        let w = chart.w_of(v);
        if !matches!(s.singular_margin(&w), Ok(m) if m > 1e-9) {
            continue;
        }
        let ds: Vec<f64> = chart.generating_grad.iter().map(|g| g.evaluate(&w)).collect::<Result<_, _>>()?;
        let scale = 1.0 + linalg::norm(&w);
        let mut r = 0.0f64;
        for j in 0..k {
            r = r.max(if chart.in_i[j] { (v[k + j] - ds[j]).abs() } else { (v[j] + ds[j]).abs() });
            r = r.max(if chart.in_ip[j] { (v[3 * k + j] + ds[k + j]).abs() } else { (v[2 * k + j] - ds[k + j]).abs() });
        }
        if r > 1e-8 * scale {
            return Err(StationaryError::CanonicalEquations { residual: r, point: v.clone() });
        }
        canon = canon.max(r / scale);
        let e: f64 = (0..2 * k).filter(|&j| chart.is_momentum(j)).map(|j| w[j] * ds[j]).sum::<f64>() - s.evaluate(&w)?;
        if e.abs() > 1e-9 * scale {
            return Err(StationaryError::GeneratingNotHomogeneous { residual: e.abs(), point: w });
        }
        euler = euler.max(e.abs() / scale);
    }
    fit.canonical_residual = Some(canon);
    fit.euler_residual = Some(euler);
    Ok(fit)
}

/// Orthogonal `Q = (Q′ | Q″)` with `θ = Q′θ′ + Q″θ″`; the last `e` columns
/// span the θ-projection of the fibers of `γ_{φXX}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaSplitting {
    pub q: DMatrix<f64>,
    pub excess: usize,
    pub base_point: Vec<f64>,
    /// Smallest `|θ′|/|θ|` over the critical samples.
    pub min_theta_prime: f64,
}

impl ThetaSplitting {
    pub fn identity(n_theta: usize, base_point: Vec<f64>) -> Self {
        Self { q: DMatrix::identity(n_theta, n_theta), excess: 0, base_point, min_theta_prime: 1.0 }
    }

    pub fn n_theta(&self) -> usize {
        self.q.nrows()
    }

    pub fn theta_prime(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.q.nrows() - self.excess;
        (0..m).map(|j| (0..theta.len()).map(|i| self.q[(i, j)] * theta[i]).sum()).collect()
    }

    pub fn theta_dd(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.q.nrows() - self.excess;
        (m..self.q.ncols()).map(|j| (0..theta.len()).map(|i| self.q[(i, j)] * theta[i]).sum()).collect()
    }

    pub fn theta_from(&self, tp: &[f64], tdd: &[f64]) -> Vec<f64> {
        let coeffs: Vec<f64> = tp.iter().chain(tdd).copied().collect();
        (0..self.q.nrows()).map(|i| (0..coeffs.len()).map(|j| self.q[(i, j)] * coeffs[j]).sum()).collect()
    }
}

/// Greedy Gram–Schmidt of projected coordinate vectors: largest projection
/// first, ties broken by index, so coordinate-aligned spans give `e_j` exactly.
fn greedy_basis(n: usize, count: usize, chosen: &mut Vec<DVector<f64>>, project: &dyn Fn(&DVector<f64>) -> DVector<f64>) {
    for _ in 0..count {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for j in 0..n {
            let mut v = project(&DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 }));
            for b in chosen.iter() {
                let c = b.dot(&v);
                v -= b * c;
            }
            let r = v.norm();
            if best.as_ref().is_none_or(|(bn, _)| r > *bn + 1e-12) {
                best = Some((r, v));
            }
        }
        let (r, v) = best.expect("n > 0");
        let mut v = v / r;
        for x in v.iter_mut() {
            if x.abs() < 1e-15 {
                *x = 0.0;
            }
        }
        chosen.push(v);
    }
}

pub fn compute_theta_splitting(
    phase: &PhaseFunction,
    crit: &CriticalManifold,
    base_index: usize,
) -> Result<ThetaSplitting, StationaryError> {
    let nt = phase.n_theta();
    let e = crit.excess;
    let base = crit
        .points
        .get(base_index)
        .ok_or_else(|| StationaryError::FiberFrames(format!("no critical sample #{base_index}")))?
        .clone();
    if e == 0 {
        return Ok(ThetaSplitting::identity(nt, base));
    }
    for (f, p) in crit.fibration_frames.iter().zip(&crit.points) {
        if f.ncols() != e {
            return Err(StationaryError::FiberFrames(format!(
                "fiber dimension {} differs from the excess {e} at {p:?}",
                f.ncols()
            )));
        }
    }
    let frame = &crit.fibration_frames[base_index];
    let ts = phase.theta_slots();
    let proj = DMatrix::from_fn(nt, e, |i, j| frame[(ts[i], j)]);
    let (u, d) = linalg::column_space(&proj, RANK_TOL);
    if d.rank != e {
        return Err(StationaryError::FiberFrames(format!(
            "θ-projection of the fiber tangent has rank {} < {e}",
            d.rank
        )));
    }
    let mut fiber_dirs = Vec::new();
    greedy_basis(nt, e, &mut fiber_dirs, &|v| &u * (u.transpose() * v));
    let mut all = fiber_dirs.clone();
    greedy_basis(nt, nt - e, &mut all, &|v| v.clone());
    let cols: Vec<DVector<f64>> = all[e..].iter().chain(&fiber_dirs).cloned().collect();
    let q = DMatrix::from_columns(&cols);
    let mut split = ThetaSplitting { q, excess: e, base_point: base, min_theta_prime: f64::INFINITY };
    for c in &crit.points {
        let th: Vec<f64> = ts.iter().map(|&s| c[s]).collect();
        let ratio = linalg::norm(&split.theta_prime(&th)) / linalg::norm(&th);
        if ratio < 1e-6 {
            return Err(StationaryError::ThetaVanishes { ratio, point: c.clone() });
        }
        split.min_theta_prime = split.min_theta_prime.min(ratio);
    }
    Ok(split)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationaryOptions {
    /// `|∇ψ| ≤ newton_tol·(1 + |w|)` ends Newton.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub det_tol: f64,
    /// Eigenvalues below `eigen_guard·max|λ|` abort as degenerate.
    pub eigen_guard: f64,
    pub critical_value_tol: f64,
    /// Initial continuation step, relative to `|θ|` at the fiber center.
    pub fiber_step: f64,
    pub fiber_growth: f64,
    /// Continuation beyond `fiber_cap·|θ|` reports an unbounded fiber.
    pub fiber_cap: f64,
    pub boundary_tol: f64,
    pub quad_rel_tol: f64,
    pub max_panels: usize,
    pub angular_min: usize,
    pub angular_max: usize,
    pub prefactor: PrefactorMode,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            max_newton: 60,
            det_tol: 1e-8,
            eigen_guard: 1e-8,
            critical_value_tol: 1e-9,
            fiber_step: 0.05,
            fiber_growth: 1.5,
            fiber_cap: 1e3,
            boundary_tol: 1e-10,
            quad_rel_tol: 1e-9,
            max_panels: 200,
            angular_min: 16,
            angular_max: 512,
            prefactor: PrefactorMode::Derived,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryPointData {
    /// `(x_Ī, x′_{Ī′}, θ′)`.
    pub point: Vec<f64>,
    /// The full point `(x, x′, θ)` of the restricted phase layout.
    pub coords: Vec<f64>,
    pub theta_dd: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub det: f64,
    pub signature: i32,
    /// `ψ` at the point, relative to the reference `S`.
    pub critical_value: f64,
    /// `φ_XX − p_Ī·x_Ī + p′_{Ī′}·x′_{Ī′}` at the point.
    pub s_value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// The big phase `ψ = φ_XX − S(w) − p_Ī·x_Ī + p′_{Ī′}·x′_{Ī′}` in the
/// variables `u = (x_Ī, x′_{Ī′}, θ′)` for fixed `(w, θ″)`.
#[derive(Clone, Debug)]
pub struct StationaryProblem {
    phase: PhaseFunction,
    chart: CanonicalChart,
    splitting: ThetaSplitting,
    dim_m: usize,
    seeds: Vec<Vec<f64>>,
    phi_fn: CompiledExpr,
    grad_fns: CompiledSet,
    hess_fns: CompiledSet,
    /// Embedding `c = c₀(w, θ″) + A·u`.
    a: DMatrix<f64>,
    pub opts: StationaryOptions,
}

impl StationaryProblem {
    /// `phase` is the restricted phase `φ_XX`, `crit` its critical set and
    /// `dim_m` the dimension of the ambient manifold.
    pub fn new(
        phase: &PhaseFunction,
        crit: &CriticalManifold,
        chart: &CanonicalChart,
        splitting: ThetaSplitting,
        dim_m: usize,
        opts: StationaryOptions,
    ) -> Result<Self, StationaryError> {
        let k = chart.k;
        if phase.base_dim() != k || splitting.n_theta() != phase.n_theta() {
            return Err(StationaryError::Chart("chart, splitting and phase dimensions disagree".into()));
        }
        let n = phase.layout().total_dim();
        let all: Vec<usize> = (0..n).collect();
        let hess: Vec<Expression> = phase.phi().hessian(&all).into_iter().flatten().collect();
        let mut cols: Vec<DVector<f64>> = Vec::new();
        let unit = |s: usize| DVector::from_fn(n, |i, _| if i == s { 1.0 } else { 0.0 });
        cols.extend(chart.bar_i().into_iter().map(|j| unit(phase.base_slots()[j])));
        cols.extend(chart.bar_ip().into_iter().map(|j| unit(phase.primed_slots()[j])));
        let m = phase.n_theta() - splitting.excess;
        for j in 0..m {
            let mut v = DVector::zeros(n);
            for (i, &s) in phase.theta_slots().iter().enumerate() {
                v[s] = splitting.q[(i, j)];
            }
            cols.push(v);
        }
        let a = if cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&cols) };
        Ok(Self {
            phi_fn: phase.phi().compile()?,
            grad_fns: CompiledSet::new(&phase.phi().gradient(&all))?,
            hess_fns: CompiledSet::new(&hess)?,
            phase: phase.clone(),
            chart: chart.clone(),
            splitting,
            dim_m,
            seeds: crit.points.clone(),
            a,
            opts,
        })
    }

    pub fn phase(&self) -> &PhaseFunction {
        &self.phase
    }

    pub fn chart(&self) -> &CanonicalChart {
        &self.chart
    }

    pub fn splitting(&self) -> &ThetaSplitting {
        &self.splitting
    }

    pub fn excess(&self) -> usize {
        self.splitting.excess
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    /// Number of stationary-phase variables `|Ī| + |Ī′| + N − e`.
    pub fn n_vars(&self) -> usize {
        self.a.ncols()
    }

    /// Linear part of `ψ` in `u`: `−p_Ī` on `x_Ī`, `+p′_{Ī′}` on `x′_{Ī′}`.
    fn linear_terms(&self, w: &[f64]) -> Vec<f64> {
        let k = self.chart.k;
        let mut out: Vec<f64> = self.chart.bar_i().into_iter().map(|j| -w[j]).collect();
        out.extend(self.chart.bar_ip().into_iter().map(|j| w[k + j]));
        out.resize(self.n_vars(), 0.0);
        out
    }

    pub fn assemble(&self, w: &[f64], theta_dd: &[f64], u: &[f64]) -> Vec<f64> {
        let k = self.chart.k;
        let (bs, ps, ts) = (self.phase.base_slots(), self.phase.primed_slots(), self.phase.theta_slots());
        let mut c = alloc::vec![0.0; self.phase.layout().total_dim()];
        let (bi, bip) = (self.chart.bar_i(), self.chart.bar_ip());
        let mut it = u.iter();
        for j in 0..k {
            c[bs[j]] = if self.chart.in_i[j] { w[j] } else { 0.0 };
            c[ps[j]] = if self.chart.in_ip[j] { w[k + j] } else { 0.0 };
        }
        for &j in &bi {
            c[bs[j]] = *it.next().expect("u too short");
        }
        for &j in &bip {
            c[ps[j]] = *it.next().expect("u too short");
        }
        let tp: Vec<f64> = it.copied().collect();
        for (s, v) in ts.iter().zip(self.splitting.theta_from(&tp, theta_dd)) {
            c[*s] = v;
        }
        c
    }

    /// Inverse of [`Self::assemble`]: `(u, θ″)` of a full point.
    pub fn split(&self, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut u: Vec<f64> = self.chart.bar_i().into_iter().map(|j| c[self.phase.base_slots()[j]]).collect();
        u.extend(self.chart.bar_ip().into_iter().map(|j| c[self.phase.primed_slots()[j]]));
        let th: Vec<f64> = self.phase.theta_slots().iter().map(|&s| c[s]).collect();
        u.extend(self.splitting.theta_prime(&th));
        (u, self.splitting.theta_dd(&th))
    }

    fn theta_of(&self, c: &[f64]) -> Vec<f64> {
        self.phase.theta_slots().iter().map(|&s| c[s]).collect()
    }

    /// `∇_u ψ` at a full point.
    fn grad_u(&self, c: &[f64], lin: &[f64]) -> Result<DVector<f64>, StationaryError> {
        let g = DVector::from_vec(self.grad_fns.eval(c)?);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::Domain { subexpression: "∇φ".into(), reason: "non-finite gradient" }.into());
        }
        Ok(self.a.transpose() * g + DVector::from_column_slice(lin))
    }

    fn hessian_u(&self, c: &[f64]) -> Result<DMatrix<f64>, StationaryError> {
        let n = c.len();
        let h = DMatrix::from_row_slice(n, n, &self.hess_fns.eval(c)?);
        Ok(self.a.transpose() * h * &self.a)
    }

    /// `φ_XX − p_Ī·x_Ī + p′_{Ī′}·x′_{Ī′}` at `c`.
    fn s_at(&self, w: &[f64], c: &[f64]) -> Result<f64, StationaryError> {
        let (u, _) = self.split(c);
        let lin = self.linear_terms(w);
        Ok(self.phi_fn.eval(c)? + u.iter().zip(&lin).map(|(a, b)| a * b).sum::<f64>())
    }

    /// A point of `F_w`: Gauss–Newton on `∂_θφ = 0`, `w(γ(c)) = w`, seeded
    /// from critical samples rescaled along the cone.
    pub fn solve_fiber_point(&self, w: &[f64]) -> Result<Vec<f64>, StationaryError> {
        let k = self.chart.k;
        let pos = self.chart.w_positions();
        let (bs, ps, ts) = (self.phase.base_slots(), self.phase.primed_slots(), self.phase.theta_slots());
        let mom: Vec<usize> = (0..2 * k).filter(|&j| self.chart.is_momentum(j)).collect();
        let w_mom = linalg::norm(&mom.iter().map(|&j| w[j]).collect::<Vec<_>>());
        let residual = |c: &[f64]| -> Result<Vec<f64>, StationaryError> {
            let mut r = self.phase.grad_theta_at(c)?;
            let g = self.phase.gamma_at(c)?;
            r.extend(pos.iter().zip(w).map(|(&p, v)| g[p] - v));
            Ok(r)
        };
        let mut seeds: Vec<(f64, Vec<f64>)> = Vec::new();
        for s in &self.seeds {
            let mut c = s.clone();
            let g = self.phase.gamma_at(&c)?;
            let m = linalg::norm(&mom.iter().map(|&j| g[pos[j]]).collect::<Vec<_>>());
            if m > 1e-12 && w_mom > 0.0 {
                for &t in ts {
                    c[t] *= w_mom / m;
                }
            }
            for j in 0..k {
                if self.chart.in_i[j] {
                    c[bs[j]] = w[j];
                }
                if self.chart.in_ip[j] {
                    c[ps[j]] = w[k + j];
                }
            }
            if let Ok(r) = residual(&c) {
                seeds.push((linalg::norm(&r), c));
            }
        }
        seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
        let scale = 1.0 + linalg::norm(w);
        let mut best = f64::INFINITY;
        let attempts = seeds.len().min(16);
        for (_, mut c) in seeds.into_iter().take(attempts) {
            let mut rn = match residual(&c) {
                Ok(r) => linalg::norm(&r),
                Err(_) => continue,
            };
            for _ in 0..80 {
                if rn <= 1e-12 * scale {
                    break;
                }
                let Ok(r) = residual(&c) else { break };
                let tm = self.phase.theta_matrix(&c)?;
                let gj = self.phase.gamma_jacobian(&c)?;
                let n = c.len();
                let j = DMatrix::from_fn(r.len(), n, |i, col| {
                    if i < ts.len() {
                        tm[(i, col)]
                    } else {
                        gj[(pos[i - ts.len()], col)]
                    }
                });
                let step = linalg::lstsq(&j, &DVector::from_vec(r), 1e-12);
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..30 {
                    let trial: Vec<f64> = c.iter().zip(step.iter()).map(|(a, b)| a - t * b).collect();
                    if let Ok(r2) = residual(&trial) {
                        let r2n = linalg::norm(&r2);
                        if r2n.is_finite() && r2n < rn {
                            c = trial;
                            rn = r2n;
                            accepted = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            best = best.min(rn);
            if rn <= 1e-10 * scale && self.phase.in_domain(&c) {
                return Ok(c);
            }
        }
        Err(StationaryError::NoFiberPoint { attempts, best_residual: best })
    }

    /// Newton on `∇_u ψ` at fixed `(w, θ″)`. `s_ref` is the value of `S(w)`
    /// the critical value is measured against (the user `S` when absent, or
    /// the point's own value in critical-value mode).
    pub fn find_stationary_point(
        &self,
        w: &[f64],
        theta_dd: &[f64],
        seed: Option<&[f64]>,
        s_ref: Option<f64>,
    ) -> Result<StationaryPointData, StationaryError> {
        let lin = self.linear_terms(w);
        let mut u = match seed {
            Some(s) => s.to_vec(),
            None => self.split(&self.solve_fiber_point(w)?).0,
        };
        let scale = 1.0 + linalg::norm(w);
        let mut c = self.assemble(w, theta_dd, &u);
        let mut g = self.grad_u(&c, &lin)?;
        let mut iterations = 0;
        loop {
            let gn = g.norm();
            if gn <= self.opts.newton_tol * scale {
                break;
            }
            if iterations >= self.opts.max_newton {
                if gn <= 1e-9 * scale {
                    break;
                }
                return Err(StationaryError::NewtonDivergence { residual: gn, iterations });
            }
            iterations += 1;
            let h = self.hessian_u(&c)?;
            let step = h.clone().lu().solve(&g).unwrap_or_else(|| linalg::lstsq(&h, &g, 1e-14));
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a - t * b).collect();
                let ct = self.assemble(w, theta_dd, &trial);
                if linalg::norm(&self.theta_of(&ct)) > 0.0 {
                    if let Ok(gt) = self.grad_u(&ct, &lin) {
                        if gt.norm() < gn {
                            u = trial;
                            c = ct;
                            g = gt;
                            accepted = true;
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                if gn <= 1e-9 * scale {
                    break;
                }
                return Err(StationaryError::NewtonDivergence { residual: gn, iterations });
            }
        }
        if !self.phase.in_domain(&c) {
            return Err(StationaryError::OutOfDomain { point: c });
        }
        let th = self.theta_of(&c);
        let ratio = linalg::norm(&self.splitting.theta_prime(&th)) / linalg::norm(&th);
        if ratio < 1e-8 {
            return Err(StationaryError::ThetaVanishes { ratio, point: c });
        }
        let full = linalg::norm(&self.phase.grad_theta_at(&c)?);
        if full > 1e-8 * scale {
            return Err(StationaryError::NotInFiber { residual: full });
        }
        let hessian = self.hessian_u(&c)?;
        let eigenvalues = linalg::symmetric_eigenvalues(&hessian);
        let max = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let det: f64 = eigenvalues.iter().product();
        if !eigenvalues.is_empty() && (min < self.opts.eigen_guard * max || det.abs() < self.opts.det_tol) {
            return Err(StationaryError::DegenerateHessian {
                det,
                min_eigenvalue: eigenvalues[0],
                max_eigenvalue: *eigenvalues.last().unwrap_or(&0.0),
            });
        }
        let signature = eigenvalues.iter().map(|v| if *v > 0.0 { 1 } else { -1 }).sum();
        let s_value = self.s_at(w, &c)?;
        let reference = match s_ref {
            Some(s) => s,
            None => self.chart.user_s(w)?.unwrap_or(s_value),
        };
        let critical_value = s_value - reference;
        if critical_value.abs() > self.opts.critical_value_tol * scale {
            return Err(StationaryError::NonzeroCriticalValue { value: critical_value });
        }
        Ok(StationaryPointData {
            point: u,
            coords: c,
            theta_dd: theta_dd.to_vec(),
            hessian,
            eigenvalues,
            det,
            signature,
            critical_value,
            s_value,
            gradient_norm: g.norm(),
            iterations,
        })
    }

    /// `S(w)` as the critical value at `stationary`; checked against the
    /// user's `S` when the chart has one.
    pub fn generating_function_value(&self, w: &[f64], stationary: &StationaryPointData) -> Result<f64, StationaryError> {
        let s = self.s_at(w, &stationary.coords)?;
        if let Some(user) = self.chart.user_s(w)? {
            if (user - s).abs() > 1e-8 * (1.0 + s.abs()) {
                return Err(StationaryError::GeneratingMismatch { user, computed: s, w: w.to_vec() });
            }
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests;
