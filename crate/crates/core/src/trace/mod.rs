//! Traces on `X = {y = 0}`: restriction of phases and amplitudes, the
//! intersection `Λ_XX = Λ ∩ T*(M×M)|_{X×X}`, the two hypotheses of the trace
//! theorem, the traced Lagrangian `i!(Λ)` and the order bookkeeping.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::expr::{BlockLayout, CompiledSet, EvalError, Expression, Node};
use crate::geom::{
    clean_intersection_check, dedup_sorted, CleanOptions, CleanReport, ConstraintSubmanifold, GeomError,
    SolveOptions, SymplecticSpace,
};
use crate::linalg::{self, RANK_TOL};
use crate::phase::{max_isotropy, CriticalManifold, PhaseError, PhaseFunction};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub enum TraceError {
    Phase(PhaseError),
    Geom(GeomError),
    Chart(String),
    /// Seeds neither converged nor stalled at a positive least-squares minimum.
    Inconclusive { attempts: usize, best_residual: f64 },
    NotImmersive { expected: usize, found: usize, point: Vec<f64> },
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceError::Phase(e) => write!(f, "{e}"),
            TraceError::Geom(e) => write!(f, "{e}"),
            TraceError::Chart(m) => write!(f, "embedding chart: {m}"),
            TraceError::Inconclusive { attempts, best_residual } => write!(
                f,
                "intersection search inconclusive after {attempts} seeds (best residual {best_residual:e})"
            ),
            TraceError::NotImmersive { expected, found, point } => write!(
                f,
                "projection not immersive: rank {found} instead of {expected} at {point:?}"
            ),
        }
    }
}

impl core::error::Error for TraceError {}

impl From<PhaseError> for TraceError {
    fn from(e: PhaseError) -> Self {
        TraceError::Phase(e)
    }
}

impl From<GeomError> for TraceError {
    fn from(e: GeomError) -> Self {
        TraceError::Geom(e)
    }
}

impl From<EvalError> for TraceError {
    fn from(e: EvalError) -> Self {
        TraceError::Geom(GeomError::Eval(e))
    }
}

/// Coordinates `(x; y)` on M with `X = {y = 0}`, `x ∈ R^k`, `y ∈ R^ν`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingChart {
    pub dim_m: usize,
    pub dim_x: usize,
    pub nu: usize,
}

impl EmbeddingChart {
    pub fn new(dim_m: usize, dim_x: usize) -> Result<Self, TraceError> {
        if dim_x == 0 || dim_x >= dim_m {
            return Err(TraceError::Chart(alloc::format!(
                "need 1 ≤ dim X < dim M, got dim X = {dim_x}, dim M = {dim_m}"
            )));
        }
        Ok(Self { dim_m, dim_x, nu: dim_m - dim_x })
    }

    /// Layout of `M × M × R^N`: blocks `x, y, xp, yp, th`.
    pub fn phase_layout(&self, n_theta: usize) -> Arc<BlockLayout> {
        let (k, nu) = (self.dim_x, self.nu);
        Arc::new(BlockLayout::new(&[("x", k), ("y", nu), ("xp", k), ("yp", nu), ("th", n_theta)]).expect("valid layout"))
    }

    /// Layout of `X × X × R^N`: blocks `x, xp, th`.
    pub fn restricted_layout(&self, n_theta: usize) -> Arc<BlockLayout> {
        let k = self.dim_x;
        Arc::new(BlockLayout::new(&[("x", k), ("xp", k), ("th", n_theta)]).expect("valid layout"))
    }

    /// Layout of `T*M`: blocks `x, y, p, q`.
    pub fn cotangent_layout(&self) -> Arc<BlockLayout> {
        let (k, nu) = (self.dim_x, self.nu);
        Arc::new(BlockLayout::new(&[("x", k), ("y", nu), ("p", k), ("q", nu)]).expect("valid layout"))
    }

    /// Layout of `T*(M×M)` in chart order `(x, y, p, q, x′, y′, p′, q′)`.
    pub fn product_layout(&self) -> Arc<BlockLayout> {
        let (k, nu) = (self.dim_x, self.nu);
        Arc::new(
            BlockLayout::new(&[
                ("x", k),
                ("y", nu),
                ("p", k),
                ("q", nu),
                ("xp", k),
                ("yp", nu),
                ("pp", k),
                ("qp", nu),
            ])
            .expect("valid layout"),
        )
    }

    /// Positions of `y` and `y′` in `T*(M×M)` chart order.
    pub fn y_positions(&self) -> Vec<usize> {
        let (k, n) = (self.dim_x, self.dim_m);
        (k..n).chain(2 * n + k..3 * n).collect()
    }

    /// Positions of `(p, p′)` (the X-covector components).
    pub fn p_positions(&self) -> Vec<usize> {
        let (k, n) = (self.dim_x, self.dim_m);
        (n..n + k).chain(3 * n..3 * n + k).collect()
    }

    /// Positions of the full covector `(p, q, p′, q′)`.
    pub fn covector_positions(&self) -> Vec<usize> {
        let n = self.dim_m;
        (n..2 * n).chain(3 * n..4 * n).collect()
    }

    /// Positions kept by `π_{X×X}`: `(x, p, x′, p′)`.
    pub fn xx_positions(&self) -> Vec<usize> {
        let (k, n) = (self.dim_x, self.dim_m);
        (0..k).chain(n..n + k).chain(2 * n..2 * n + k).chain(3 * n..3 * n + k).collect()
    }

    /// `π_{X×X}`: drops `y, q, y′, q′`.
    pub fn project_xx(&self, v: &[f64]) -> Vec<f64> {
        self.xx_positions().iter().map(|&i| v[i]).collect()
    }
}

/// `φ_XX(x, x′, θ) = φ(x, 0, x′, 0, θ)` together with its parent.
#[derive(Clone, Debug)]
pub struct RestrictedPhase {
    pub phase: PhaseFunction,
    pub parent: PhaseFunction,
    pub chart: EmbeddingChart,
}

impl RestrictedPhase {
    /// Embeds `(x, x′, θ)` as `(x, 0, x′, 0, θ)` in the parent layout.
    pub fn embed(&self, c: &[f64]) -> Vec<f64> {
        let k = self.chart.dim_x;
        let nt = self.phase.n_theta();
        let mut out = alloc::vec![0.0; self.parent.layout().total_dim()];
        for i in 0..k {
            out[self.parent.base_slots()[i]] = c[i];
            out[self.parent.primed_slots()[i]] = c[k + i];
        }
        for j in 0..nt {
            out[self.parent.theta_slots()[j]] = c[2 * k + j];
        }
        out
    }
}

fn restriction_map(parent: &PhaseFunction, chart: &EmbeddingChart) -> (Vec<usize>, Vec<(usize, f64)>) {
    let k = chart.dim_x;
    let (b, p) = (parent.base_slots(), parent.primed_slots());
    let keep: Vec<usize> = b[..k].iter().chain(&p[..k]).chain(parent.theta_slots()).copied().collect();
    let fixed = b[k..].iter().chain(&p[k..]).map(|&s| (s, 0.0)).collect();
    (keep, fixed)
}

/// AST-level substitution `y = y′ = 0` in the phase and in every amplitude part.
pub fn restrict_phase_and_amplitude(
    phase: &PhaseFunction,
    amplitude: &[Expression],
    chart: &EmbeddingChart,
) -> Result<(RestrictedPhase, Vec<Expression>), TraceError> {
    if phase.base_dim() != chart.dim_m {
        return Err(TraceError::Chart(alloc::format!(
            "phase has base dimension {}, chart expects {}",
            phase.base_dim(),
            chart.dim_m
        )));
    }
    let layout = chart.restricted_layout(phase.n_theta());
    let (keep, fixed) = restriction_map(phase, chart);
    let restricted = phase.restrict(&layout, &keep, &fixed, &["x"], &["xp"], "th")?;
    let map = |old: usize| match fixed.iter().find(|(s, _)| *s == old) {
        Some(&(_, v)) => Node::Const(v),
        None => Node::Var(keep.iter().position(|&s| s == old).expect("slot kept")),
    };
    let amps = amplitude.iter().map(|a| a.bind_params().substitute(&layout, &map).simplified()).collect();
    Ok((RestrictedPhase { phase: restricted, parent: phase.clone(), chart: *chart }, amps))
}

/// A conic Lagrangian `Λ = Γ(P)` given by a parameter manifold `P` and a map
/// `Γ: P → T*(M×M)` of constant rank with fibers of dimension `fiber_dim`.
/// Phase sources use `P = C_φ`, `Γ = γ_φ`; graphs use `P = Λ`, `Γ = id`.
/// In both cases `Γ` preserves base points, so `Γ^{-1}(T*(M×M)|_{X×X})` is
/// `P ∩ {y = y′ = 0}`.
#[derive(Clone, Debug)]
pub struct ParametrizedLagrangian {
    param: ConstraintSubmanifold,
    gamma: Vec<Expression>,
    gamma_fns: CompiledSet,
    gamma_jac_fns: CompiledSet,
    chart: EmbeddingChart,
    fiber_dim: usize,
    y_slots: Vec<usize>,
    samples: Vec<Vec<f64>>,
}

impl ParametrizedLagrangian {
    pub fn from_phase(phase: &PhaseFunction, crit: &CriticalManifold, chart: &EmbeddingChart) -> Result<Self, TraceError> {
        let k = chart.dim_x;
        let param = phase.critical_submanifold()?.with_expected_dim(crit.dim);
        let y_slots = phase.base_slots()[k..].iter().chain(&phase.primed_slots()[k..]).copied().collect();
        Self::build(param, phase.gamma_exprs().to_vec(), *chart, crit.excess, y_slots, crit.points.clone())
    }

    /// `graph` lives on the `T*(M×M)` chart layout; `Γ` is the identity.
    pub fn from_graph(graph: &ConstraintSubmanifold, samples: Vec<Vec<f64>>, chart: &EmbeddingChart) -> Result<Self, TraceError> {
        let l = graph.layout().clone();
        let gamma = (0..l.total_dim()).map(|s| Expression::var(s, &l)).collect();
        Self::build(graph.clone(), gamma, *chart, 0, chart.y_positions(), samples)
    }

    fn build(
        param: ConstraintSubmanifold,
        gamma: Vec<Expression>,
        chart: EmbeddingChart,
        fiber_dim: usize,
        y_slots: Vec<usize>,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self, TraceError> {
        if gamma.len() != 4 * chart.dim_m {
            return Err(TraceError::Chart("Γ must have 4·dim M components".into()));
        }
        let n = param.ambient_dim();
        let jac: Vec<Expression> = gamma.iter().flat_map(|g| (0..n).map(move |s| g.differentiate(s))).collect();
        Ok(Self {
            gamma_fns: CompiledSet::new(&gamma)?,
            gamma_jac_fns: CompiledSet::new(&jac)?,
            param,
            gamma,
            chart,
            fiber_dim,
            y_slots,
            samples,
        })
    }

    pub fn param(&self) -> &ConstraintSubmanifold {
        &self.param
    }

    pub fn chart(&self) -> &EmbeddingChart {
        &self.chart
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn gamma_exprs(&self) -> &[Expression] {
        &self.gamma
    }

    pub fn gamma(&self, c: &[f64]) -> Result<Vec<f64>, TraceError> {
        Ok(self.gamma_fns.eval(c)?)
    }

    pub fn gamma_jacobian(&self, c: &[f64]) -> Result<DMatrix<f64>, TraceError> {
        Ok(DMatrix::from_row_slice(self.gamma.len(), self.param.ambient_dim(), &self.gamma_jac_fns.eval(c)?))
    }

    /// `P ∩ {y = y′ = 0}`.
    pub fn restricted_param(&self) -> Result<ConstraintSubmanifold, TraceError> {
        let plane = ConstraintSubmanifold::coordinate_plane(self.param.layout(), &self.y_slots)?;
        Ok(self.param.intersect(&plane)?)
    }

    pub fn y_plane(&self) -> Result<ConstraintSubmanifold, TraceError> {
        Ok(ConstraintSubmanifold::coordinate_plane(self.param.layout(), &self.y_slots)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntersectionStatus {
    Found,
    /// Every seed stalled at a positive least-squares minimum.
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntersectionOptions {
    pub solve: SolveOptions,
    /// Extra random seeds drawn from `base_box` (fiber part on the unit sphere).
    pub random_seeds: usize,
    pub base_box: (f64, f64),
    pub dedup_tol: f64,
    pub seed: u64,
}

impl Default for IntersectionOptions {
    fn default() -> Self {
        Self { solve: SolveOptions::default(), random_seeds: 64, base_box: (-1.0, 1.0), dedup_tol: 1e-6, seed: 2 }
    }
}

/// Parameter-space samples of `Λ_XX` and their images.
#[derive(Clone, Debug)]
pub struct LambdaXxSamples {
    pub status: IntersectionStatus,
    pub params: Vec<Vec<f64>>,
    pub points: Vec<Vec<f64>>,
    pub attempts: usize,
    pub best_residual: f64,
}

impl LambdaXxSamples {
    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Gauss–Newton refinement of the Λ-constraints stacked with `{y = y′ = 0}`.
pub fn lambda_xx_samples(lag: &ParametrizedLagrangian, opts: &IntersectionOptions) -> Result<LambdaXxSamples, TraceError> {
    let stacked = lag.restricted_param()?;
    let n = stacked.ambient_dim();
    let mut seeds: Vec<Vec<f64>> = lag
        .samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for &y in &lag.y_slots {
                s[y] = 0.0;
            }
            s
        })
        .collect();
    let mut r = rng::seeded(opts.seed);
    for _ in 0..opts.random_seeds {
        let mut s: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, opts.base_box.0, opts.base_box.1)).collect();
        let dir = rng::unit_vector(&mut r, stacked.fiber().len());
        for (&f, d) in stacked.fiber().iter().zip(&dir) {
            s[f] = *d;
        }
        seeds.push(s);
    }
    let mut found = Vec::new();
    let mut best = f64::INFINITY;
    let mut all_stalled = true;
    for s in &seeds {
        let p = stacked.project(s, &opts.solve)?;
        best = best.min(p.residual);
        if p.converged {
            let mut q = p.point;
            stacked.normalize_fiber(&mut q);
            let ok = stacked.residual_norm(&q).is_ok_and(|res| res <= opts.solve.tol_residual * 1e3);
            if ok && stacked.in_domain(&q) {
                found.push(q);
            }
        } else if !stalled_at_minimum(&stacked, &p.point) {
            all_stalled = false;
        }
    }
    let params = dedup_sorted(found, opts.dedup_tol);
    if params.is_empty() && !all_stalled {
        return Err(TraceError::Inconclusive { attempts: seeds.len(), best_residual: best });
    }
    let points = params.iter().map(|c| lag.gamma(c)).collect::<Result<Vec<_>, _>>()?;
    let status = if params.is_empty() { IntersectionStatus::Empty } else { IntersectionStatus::Found };
    Ok(LambdaXxSamples { status, params, points, attempts: seeds.len(), best_residual: best })
}

fn stalled_at_minimum(sub: &ConstraintSubmanifold, x: &[f64]) -> bool {
    let (Ok(r), Ok(j)) = (sub.residual(x), sub.jacobian(x)) else { return false };
    let r = DVector::from_vec(r);
    let g = j.transpose() * &r;
    g.norm() <= 1e-6 * (1.0 + j.norm()) * r.norm()
}

/// Condition 1 of the trace theorem, with `Λ_XX`'s dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition1 {
    /// `None` when `Λ_XX` is empty (the trace is smoothing).
    pub report: Option<CleanReport>,
    pub dim_lambda_xx: Option<usize>,
}

impl Condition1 {
    pub fn passed(&self) -> bool {
        self.report.as_ref().is_none_or(|r| r.clean())
    }
}

/// Cleanness of `Λ ∩ T*(M×M)|_{X×X}`. Tangent spaces are compared in
/// `T*(M×M)` (pushed-forward frames against `{dy = dy′ = 0}`); the dimension
/// of `Λ_XX` is sampled in parameter space and reduced by the fiber dimension.
pub fn check_condition_clean(
    lag: &ParametrizedLagrangian,
    lxx: &LambdaXxSamples,
    opts: &CleanOptions,
) -> Result<Condition1, TraceError> {
    if lxx.is_empty() {
        return Ok(Condition1 { report: None, dim_lambda_xx: None });
    }
    let chart = lag.chart;
    let total = 4 * chart.dim_m;
    let dim_lambda = 2 * chart.dim_m;
    let ys = chart.y_positions();
    let keep: Vec<usize> = (0..total).filter(|i| !ys.contains(i)).collect();
    let mut tb = DMatrix::zeros(total, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        tb[(i, j)] = 1.0;
    }
    let stacked = lag.restricted_param()?;
    let mut r = rng::seeded(opts.seed);
    let (mut caps, mut locals, mut ranks) = (Vec::new(), Vec::new(), Vec::new());
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_sample = None;
    let mut min_gap = f64::INFINITY;
    for c in &lxx.params {
        let tp = lag.param.tangent_basis(c)?;
        let pushed = lag.gamma_jacobian(c)? * &tp;
        let (frame, d) = linalg::column_space(&pushed, RANK_TOL);
        if d.rank != dim_lambda {
            return Err(TraceError::Geom(GeomError::NotRegular { rank: d.rank, expected: dim_lambda, point: c.clone() }));
        }
        let mut joined = DMatrix::zeros(total, dim_lambda + keep.len());
        joined.view_mut((0, 0), (total, dim_lambda)).copy_from(&frame);
        joined.view_mut((0, dim_lambda), (total, keep.len())).copy_from(&tb);
        let span = linalg::rank_decision(&joined, RANK_TOL);
        let cap = dim_lambda + keep.len() - span.rank;
        let sr = linalg::rank_decision(&stacked.jacobian(c)?, RANK_TOL);
        let ld = stacked.local_dimension(c, &mut r, opts.local_radius)?;
        let local = ld.rank.saturating_sub(lag.fiber_dim);
        for g in [d.gap, span.gap, sr.gap, ld.gap] {
            min_gap = min_gap.min(g);
        }
        let gap = cap as f64 - local as f64;
        if gap > worst_gap {
            worst_gap = gap;
            worst_sample = Some(lag.gamma(c)?);
        }
        caps.push(cap);
        locals.push(local);
        ranks.push(sr.rank);
    }
    if caps.len() < opts.min_samples {
        return Err(TraceError::Geom(GeomError::TooFewSamples { found: caps.len(), required: opts.min_samples }));
    }
    let common = |v: &[usize]| v.first().copied().filter(|f| v.iter().all(|x| x == f));
    let intersection_dim = common(&caps);
    let local_dim = common(&locals);
    let transversal = dim_lambda as i64 + keep.len() as i64 - total as i64;
    let report = CleanReport {
        is_manifold: local_dim.is_some(),
        intersection_dim,
        local_dim,
        rank_constant: common(&ranks).is_some(),
        tangent_equality: caps.iter().zip(&locals).all(|(c, l)| c == l),
        excess_over_transversal: intersection_dim.map(|d| d as i64 - transversal),
        samples_used: caps.len(),
        worst_gap,
        worst_sample,
        marginal: min_gap < linalg::MARGINAL_GAP,
        min_rank_gap: min_gap,
    };
    Ok(Condition1 { dim_lambda_xx: local_dim, report: Some(report) })
}

/// Condition 2: `Λ_XX` stays away from the conormal directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition2 {
    /// Minimum of `|(p, p′)| / |(p, q, p′, q′)|` after the local minimization.
    pub g_min: f64,
    /// Minimum over the raw samples only.
    pub sample_min: f64,
    pub delta: f64,
    pub passed: bool,
    /// Point of `Λ_XX` realizing `g_min`.
    pub witness: Option<Vec<f64>>,
    pub vacuous: bool,
}

fn conormal_ratio(chart: &EmbeddingChart, v: &[f64]) -> f64 {
    let pp: Vec<f64> = chart.p_positions().iter().map(|&i| v[i]).collect();
    let cov: Vec<f64> = chart.covector_positions().iter().map(|&i| v[i]).collect();
    linalg::norm(&pp) / linalg::norm(&cov)
}

/// Decides condition 2 on the unit-covector slice: the ratio is evaluated on
/// every sample, then minimized by projected Gauss–Newton on `r(c) = (p, p′)/|ζ|`
/// from the worst samples.
pub fn check_condition_conormal(
    lag: &ParametrizedLagrangian,
    lxx: &LambdaXxSamples,
    delta: f64,
) -> Result<Condition2, TraceError> {
    if lxx.is_empty() {
        return Ok(Condition2 { g_min: f64::INFINITY, sample_min: f64::INFINITY, delta, passed: true, witness: None, vacuous: true });
    }
    let chart = lag.chart;
    let mut scored: Vec<(f64, usize)> =
        lxx.points.iter().enumerate().map(|(i, v)| (conormal_ratio(&chart, v), i)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sample_min = scored[0].0;
    let mut best = (sample_min, lxx.points[scored[0].1].clone());
    let stacked = lag.restricted_param()?;
    for &(_, i) in scored.iter().take(5) {
        if let Some((g, v)) = minimize_ratio(lag, &stacked, &lxx.params[i])? {
            if g < best.0 {
                best = (g, v);
            }
        }
    }
    let passed = best.0 >= delta;
    Ok(Condition2 { g_min: best.0, sample_min, delta, passed, witness: Some(best.1), vacuous: false })
}

fn minimize_ratio(
    lag: &ParametrizedLagrangian,
    stacked: &ConstraintSubmanifold,
    start: &[f64],
) -> Result<Option<(f64, Vec<f64>)>, TraceError> {
    let chart = lag.chart;
    let pp = chart.p_positions();
    let cov = chart.covector_positions();
    let solve = SolveOptions { tol_residual: 1e-12, ..SolveOptions::default() };
    let mut c = start.to_vec();
    let mut img = lag.gamma(&c)?;
    let mut g = conormal_ratio(&chart, &img);
    for _ in 0..60 {
        let jac = lag.gamma_jacobian(&c)?;
        let t = linalg::null_space(&stacked.jacobian(&c)?, RANK_TOL).0;
        if t.ncols() == 0 {
            break;
        }
        let s = linalg::norm(&cov.iter().map(|&i| img[i]).collect::<Vec<_>>());
        let r = DVector::from_iterator(pp.len(), pp.iter().map(|&i| img[i] / s));
        // dr = (du − r (vᵀ dv)/s) / s with u = (p, p′), v = full covector
        let mut vdv = DMatrix::zeros(1, jac.ncols());
        for &i in &cov {
            vdv += jac.row(i) * img[i];
        }
        let mut jr = DMatrix::zeros(pp.len(), jac.ncols());
        for (a, &i) in pp.iter().enumerate() {
            let row = (jac.row(i) - vdv.row(0) * (r[a] / s)) / s;
            jr.set_row(a, &row);
        }
        let step = &t * linalg::lstsq(&(&jr * &t), &-&r, 1e-12);
        let mut accepted = false;
        let mut lambda = 1.0;
        for _ in 0..20 {
            let trial: Vec<f64> = c.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
            let p = stacked.project(&trial, &solve)?;
            if p.converged && stacked.in_domain(&p.point) {
                let mut q = p.point;
                stacked.normalize_fiber(&mut q);
                let qi = lag.gamma(&q)?;
                let gq = conormal_ratio(&chart, &qi);
                if gq < g {
                    let progress = g - gq;
                    c = q;
                    img = qi;
                    g = gq;
                    accepted = progress > 1e-15;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted || g < 1e-14 {
            break;
        }
    }
    Ok(Some((g, img)))
}

/// Samples of `i!(Λ) = π_{X×X}(Λ_XX)` with projected tangent frames.
#[derive(Clone, Debug)]
pub struct TracedLagrangian {
    /// Points in `(x, p, x′, p′)` order.
    pub points: Vec<Vec<f64>>,
    pub frames: Vec<DMatrix<f64>>,
    pub params: Vec<Vec<f64>>,
    pub rank: usize,
    pub isotropy: f64,
    /// Dimension of the fibers of `Λ_XX → i!(Λ)`.
    pub projection_fiber_dim: usize,
    /// Some point has both covectors zero.
    pub zero_covector: bool,
}

pub fn trace_lagrangian(lag: &ParametrizedLagrangian, lxx: &LambdaXxSamples, dim_lambda_xx: usize) -> Result<TracedLagrangian, TraceError> {
    let chart = lag.chart;
    let k = chart.dim_x;
    let keep = chart.xx_positions();
    let stacked = lag.restricted_param()?;
    let mut out = TracedLagrangian {
        points: Vec::new(),
        frames: Vec::new(),
        params: lxx.params.clone(),
        rank: 2 * k,
        isotropy: 0.0,
        projection_fiber_dim: dim_lambda_xx.saturating_sub(2 * k),
        zero_covector: false,
    };
    for (c, v) in lxx.params.iter().zip(&lxx.points) {
        let t = linalg::null_space(&stacked.jacobian(c)?, RANK_TOL).0;
        let pushed = lag.gamma_jacobian(c)? * t;
        let projected = DMatrix::from_fn(keep.len(), pushed.ncols(), |i, j| pushed[(keep[i], j)]);
        let (frame, d) = linalg::column_space(&projected, RANK_TOL);
        if d.rank != 2 * k {
            return Err(TraceError::NotImmersive { expected: 2 * k, found: d.rank, point: v.clone() });
        }
        out.isotropy = out.isotropy.max(max_isotropy(SymplecticSpace::Product { n: k }, &frame)?);
        let pt = chart.project_xx(v);
        let cov = linalg::norm(&[&pt[k..2 * k], &pt[3 * k..4 * k]].concat());
        out.zero_covector |= cov <= 1e-12 * (1.0 + linalg::norm(&pt));
        out.points.push(pt);
        out.frames.push(frame);
    }
    Ok(out)
}

/// `ord Φ − dim X + ν/2 + dim Λ_XX / 2`.
pub fn trace_order(order_phi: f64, chart: &EmbeddingChart, dim_lambda_xx: usize) -> f64 {
    order_phi - chart.dim_x as f64 + 0.5 * chart.nu as f64 + 0.5 * dim_lambda_xx as f64
}

/// Admissible Sobolev indices `s ∈ (d + ν/2, −ν/2)`; `None` unless `d < −ν`.
pub fn check_sobolev_window(order_phi: f64, chart: &EmbeddingChart) -> Option<(f64, f64)> {
    let nu = chart.nu as f64;
    (order_phi < -nu).then(|| (order_phi + 0.5 * nu, -0.5 * nu))
}

/// The parameter-space lemma: `C_φXX = C_φ ∩ {y = y′ = 0}` cleanly.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaReport {
    pub passed: bool,
    /// Largest `|∂_θφ|` of embedded `C_φXX` samples.
    pub embedding_residual: f64,
    pub clean: CleanReport,
    pub restricted_dim: usize,
}

pub fn verify_parameter_space_cleanness(
    restricted: &RestrictedPhase,
    crit_xx: &CriticalManifold,
    opts: &CleanOptions,
) -> Result<LemmaReport, TraceError> {
    let parent = &restricted.parent;
    let chart = restricted.chart;
    let k = chart.dim_x;
    let embedded: Vec<Vec<f64>> = crit_xx.points.iter().map(|c| restricted.embed(c)).collect();
    let mut residual = 0.0f64;
    for c in &embedded {
        residual = residual.max(linalg::norm(&parent.grad_theta_at(c)?));
    }
    let cphi = parent.critical_submanifold()?;
    let n_par = parent.layout().total_dim();
    let cphi_dim = n_par - linalg::numeric_rank(&parent.theta_matrix(&embedded[0])?, RANK_TOL);
    let cphi = cphi.with_expected_dim(cphi_dim);
    let ys: Vec<usize> = parent.base_slots()[k..].iter().chain(&parent.primed_slots()[k..]).copied().collect();
    let plane = ConstraintSubmanifold::coordinate_plane(parent.layout(), &ys)?;
    let clean = clean_intersection_check(&cphi, &plane, &embedded, opts)?;
    let passed = clean.clean() && residual < 1e-8 && clean.local_dim == Some(crit_xx.dim);
    Ok(LemmaReport { passed, embedding_residual: residual, clean, restricted_dim: crit_xx.dim })
}

/// Largest `|γ_{φXX}(c) − π_{X×X}(γ_φ(c, y = y′ = 0))|` over `C_φXX` samples.
pub fn diagram_residual(restricted: &RestrictedPhase, crit_xx: &CriticalManifold) -> Result<f64, TraceError> {
    let mut worst = 0.0f64;
    for c in &crit_xx.points {
        let small = restricted.phase.gamma_at(c)?;
        let big = restricted.chart.project_xx(&restricted.parent.gamma_at(&restricted.embed(c))?);
        worst = worst.max(linalg::dist(&small, &big));
    }
    Ok(worst)
}

/// Verdicts and formulas of the trace theorem for one Lagrangian.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceReport {
    pub condition1: Condition1,
    pub condition2: Condition2,
    pub excess_e: Option<usize>,
    pub dim_lambda_xx: Option<usize>,
    pub traced_order: Option<f64>,
    pub sobolev_window: Option<(f64, f64)>,
    pub parameter_space_cleanness: Option<bool>,
    pub empty: bool,
}

impl TraceReport {
    pub fn passed(&self) -> bool {
        self.condition1.passed() && self.condition2.passed
    }
}
