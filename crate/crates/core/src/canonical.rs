//! Homogeneous canonical transformations `g` of `T*₀M`, their graphs as
//! conic Lagrangians in `T*(M×M)`, and the trace conditions stated directly
//! in terms of `g`, cross-checked against the Lagrangian-level conditions on
//! the graph.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::expr::{BlockLayout, CompiledSet, EvalError, ExprError, Expression, Node};
use crate::geom::{
    clean_intersection_check, symplectic_form_value, CleanOptions, CleanReport, ConstraintSubmanifold, GeomError,
    SolveOptions, SymplecticSpace,
};
use crate::linalg;
use crate::phase::{max_isotropy, PhaseError, PhaseFunction};
use crate::rng::{self, SampleRng};
use crate::trace::{
    check_condition_clean, check_condition_conormal, lambda_xx_samples, EmbeddingChart, IntersectionOptions,
    ParametrizedLagrangian, TraceError,
};

#[derive(Clone, Debug, PartialEq)]
pub enum CanonicalError {
    Expr(ExprError),
    Eval(EvalError),
    Geom(GeomError),
    Trace(TraceError),
    Phase(PhaseError),
    Dimension(String),
    /// `ψ ∘ ψ⁻¹ ≠ id` or `g ∘ g⁻¹ ≠ id` at a sample.
    InverseMismatch { residual: f64, point: Vec<f64> },
    NotInvertible { point: Vec<f64> },
    Unsupported(String),
    /// The graph is not isotropic for `ω ⊖ ω′`.
    NotLagrangian { isotropy: f64 },
}

impl fmt::Display for CanonicalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CanonicalError::Expr(e) => write!(f, "{e}"),
            CanonicalError::Eval(e) => write!(f, "{e}"),
            CanonicalError::Geom(e) => write!(f, "{e}"),
            CanonicalError::Trace(e) => write!(f, "{e}"),
            CanonicalError::Phase(e) => write!(f, "{e}"),
            CanonicalError::Dimension(m) => write!(f, "canonical map: {m}"),
            CanonicalError::InverseMismatch { residual, point } => {
                write!(f, "supplied inverse does not invert the map (residual {residual:.3e} at {point:?})")
            }
            CanonicalError::NotInvertible { point } => write!(f, "differential is not invertible at {point:?}"),
            CanonicalError::Unsupported(m) => write!(f, "unsupported: {m}"),
            CanonicalError::NotLagrangian { isotropy } => write!(
                f,
                "graph is not Lagrangian for ω ⊖ ω′ (isotropy {isotropy:.3e}); check the sign convention of the map"
            ),
        }
    }
}

impl core::error::Error for CanonicalError {}

impl From<ExprError> for CanonicalError {
    fn from(e: ExprError) -> Self {
        CanonicalError::Expr(e)
    }
}

impl From<EvalError> for CanonicalError {
    fn from(e: EvalError) -> Self {
        CanonicalError::Eval(e)
    }
}

impl From<GeomError> for CanonicalError {
    fn from(e: GeomError) -> Self {
        CanonicalError::Geom(e)
    }
}

impl From<PhaseError> for CanonicalError {
    fn from(e: PhaseError) -> Self {
        CanonicalError::Phase(e)
    }
}

impl From<TraceError> for CanonicalError {
    fn from(e: TraceError) -> Self {
        CanonicalError::Trace(e)
    }
}

/// `g(x, y, p, q)` on the `T*M` chart (blocks `x, y, p, q`) with its inverse
/// and an optional open conic domain `{d > 0}`.
#[derive(Clone, Debug)]
pub struct CanonicalMap {
    chart: EmbeddingChart,
    layout: Arc<BlockLayout>,
    forward: Vec<Expression>,
    inverse: Vec<Expression>,
    domain: Vec<Expression>,
    fwd_fns: CompiledSet,
    inv_fns: CompiledSet,
    jac_fns: CompiledSet,
    domain_fns: CompiledSet,
}

impl CanonicalMap {
    pub fn new(
        chart: &EmbeddingChart,
        forward: Vec<Expression>,
        inverse: Vec<Expression>,
        domain: Vec<Expression>,
    ) -> Result<Self, CanonicalError> {
        let layout = chart.cotangent_layout();
        let n = 2 * chart.dim_m;
        for (what, v) in [("forward", &forward), ("inverse", &inverse)] {
            if v.len() != n {
                return Err(CanonicalError::Dimension(format!("{what} map needs {n} components, got {}", v.len())));
            }
        }
        for e in forward.iter().chain(&inverse).chain(&domain) {
            if e.layout().total_dim() != n {
                return Err(CanonicalError::Dimension("components must live on the T*M layout".into()));
            }
        }
        let bind = |v: Vec<Expression>| -> Vec<Expression> { v.into_iter().map(|e| e.bind_params().simplified()).collect() };
        let (forward, inverse, domain) = (bind(forward), bind(inverse), bind(domain));
        let jac: Vec<Expression> = forward.iter().flat_map(|g| (0..n).map(move |s| g.differentiate(s))).collect();
        Ok(Self {
            chart: *chart,
            fwd_fns: CompiledSet::new(&forward)?,
            inv_fns: CompiledSet::new(&inverse)?,
            jac_fns: CompiledSet::new(&jac)?,
            domain_fns: CompiledSet::new(&domain)?,
            layout,
            forward,
            inverse,
            domain,
        })
    }

    /// Parses component texts on the `T*M` layout, binding `params`.
    pub fn parse(
        chart: &EmbeddingChart,
        forward: &[&str],
        inverse: &[&str],
        domain: &[&str],
        params: &[(&str, f64)],
    ) -> Result<Self, CanonicalError> {
        let layout = chart.cotangent_layout();
        let parse = |v: &[&str]| -> Result<Vec<Expression>, CanonicalError> {
            v.iter()
                .map(|t| {
                    let mut e = Expression::parse(t, &layout)?;
                    for (k, x) in params {
                        e = e.with_param(k, *x);
                    }
                    Ok(e)
                })
                .collect()
        };
        Self::new(chart, parse(forward)?, parse(inverse)?, parse(domain)?)
    }

    pub fn chart(&self) -> &EmbeddingChart {
        &self.chart
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn forward(&self) -> &[Expression] {
        &self.forward
    }

    pub fn inverse(&self) -> &[Expression] {
        &self.inverse
    }

    pub fn domain(&self) -> &[Expression] {
        &self.domain
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>, CanonicalError> {
        Ok(self.fwd_fns.eval(z)?)
    }

    pub fn apply_inverse(&self, z: &[f64]) -> Result<Vec<f64>, CanonicalError> {
        Ok(self.inv_fns.eval(z)?)
    }

    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>, CanonicalError> {
        let n = 2 * self.chart.dim_m;
        Ok(DMatrix::from_row_slice(n, n, &self.jac_fns.eval(z)?))
    }

    pub fn in_domain(&self, z: &[f64]) -> bool {
        let n = self.chart.dim_m;
        linalg::norm(&z[n..]) > 0.0 && self.domain_fns.eval(z).is_ok_and(|v| v.iter().all(|d| *d > 0.0))
    }

    fn covector_positions(&self) -> core::ops::Range<usize> {
        self.chart.dim_m..2 * self.chart.dim_m
    }
}

/// Random points of `T*₀M` in the domain: base in `[-1, 1]^n`, covector of
/// norm in `[0.5, 2]`.
pub fn sample_cotangent(g: &CanonicalMap, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = g.chart.dim_m;
    let mut r = rng::seeded(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 50 {
        if out.len() == count {
            break;
        }
        let mut z: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let rad = rng::uniform(&mut r, 0.5, 2.0);
        z.extend(rng::unit_vector(&mut r, n).into_iter().map(|v| v * rad));
        if g.in_domain(&z) && g.apply(&z).is_ok_and(|w| g.in_domain(&w)) {
            out.push(z);
        }
    }
    out
}

fn det_and_cofactors(a: &[Vec<Expression>]) -> Result<(Expression, Vec<Vec<Expression>>), CanonicalError> {
    let n = a.len();
    let minor = |rows: &[usize], cols: &[usize]| -> Expression {
        match rows.len() {
            1 => a[rows[0]][cols[0]].clone(),
            _ => &a[rows[0]][cols[0]] * &a[rows[1]][cols[1]] - &a[rows[0]][cols[1]] * &a[rows[1]][cols[0]],
        }
    };
    match n {
        1 => {
            let one = Expression::constant(1.0, a[0][0].layout());
            Ok((a[0][0].clone(), alloc::vec![alloc::vec![one]]))
        }
        2 | 3 => {
            let mut c = Vec::with_capacity(n);
            for i in 0..n {
                let mut row = Vec::with_capacity(n);
                for j in 0..n {
                    let rows: Vec<usize> = (0..n).filter(|&r| r != i).collect();
                    let cols: Vec<usize> = (0..n).filter(|&r| r != j).collect();
                    let m = minor(&rows, &cols);
                    row.push(if (i + j) % 2 == 0 { m } else { -m });
                }
                c.push(row);
            }
            let det = (0..n).map(|j| &a[0][j] * &c[0][j]).reduce(|x, y| x + y).expect("n ≥ 2");
            Ok((det, c))
        }
        _ => Err(CanonicalError::Unsupported(format!("cotangent lifts need dim M ≤ 3, got {n}"))),
    }
}

/// `(m, ζ) ↦ (ψ(m), dψ(m)^{−T} ζ)` assembled symbolically; `dψ^{−T}` is the
/// cofactor matrix over the determinant.
fn lift_components(chart: &EmbeddingChart, psi: &[Expression]) -> Result<(Vec<Expression>, Expression), CanonicalError> {
    let n = chart.dim_m;
    let layout = chart.cotangent_layout();
    let dpsi: Vec<Vec<Expression>> = psi.iter().map(|f| (0..n).map(|s| f.differentiate(s)).collect()).collect();
    let (det, cof) = det_and_cofactors(&dpsi)?;
    let det = det.simplified();
    let mut out: Vec<Expression> = psi.to_vec();
    for row in cof.iter().take(n) {
        let sum = row
            .iter()
            .enumerate()
            .map(|(j, c)| c * &Expression::var(n + j, &layout))
            .reduce(|x, y| x + y)
            .expect("n ≥ 1");
        out.push((sum / det.clone()).simplified());
    }
    Ok((out, det))
}

/// Cotangent lift of the base diffeomorphism `ψ` (components on the `T*M`
/// layout, depending on `x, y` only) with inverse `ψ⁻¹`.
pub fn lift_point_transformation(
    chart: &EmbeddingChart,
    psi: Vec<Expression>,
    psi_inverse: Vec<Expression>,
    domain: Vec<Expression>,
) -> Result<CanonicalMap, CanonicalError> {
    let n = chart.dim_m;
    if psi.len() != n || psi_inverse.len() != n {
        return Err(CanonicalError::Dimension(format!("base maps need {n} components")));
    }
    let psi: Vec<Expression> = psi.into_iter().map(|e| e.bind_params()).collect();
    let psi_inverse: Vec<Expression> = psi_inverse.into_iter().map(|e| e.bind_params()).collect();
    for e in psi.iter().chain(&psi_inverse) {
        if (n..2 * n).any(|s| e.depends_on(s)) {
            return Err(CanonicalError::Dimension("base maps may not depend on covectors".into()));
        }
    }
    let (fwd, det) = lift_components(chart, &psi)?;
    let (inv, _) = lift_components(chart, &psi_inverse)?;
    let (f, fi) = (CompiledSet::new(&psi)?, CompiledSet::new(&psi_inverse)?);
    let dfn = det.compile()?;
    let mut r = rng::seeded(0x11f7);
    for _ in 0..32 {
        let mut m: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        m.extend(core::iter::repeat_n(0.0, n));
        let mut pre = fi.eval(&m)?;
        pre.extend(core::iter::repeat_n(0.0, n));
        let mut back = f.eval(&pre)?;
        back.extend(core::iter::repeat_n(0.0, n));
        let res = linalg::dist(&back, &m);
        if res > 1e-9 {
            return Err(CanonicalError::InverseMismatch { residual: res, point: m[..n].to_vec() });
        }
        if dfn.eval(&m)?.abs() < 1e-12 {
            return Err(CanonicalError::NotInvertible { point: m[..n].to_vec() });
        }
    }
    CanonicalMap::new(chart, fwd, inv, domain)
}

/// The graph phase `φ(z, z′, θ) = (z − ψ(z′))·θ` of the lift of `ψ` on the
/// layout of [`EmbeddingChart::phase_layout`] with `N = dim M`. The cone of
/// `g` is pulled back through the source point `(z′, dψ(z′)ᵀθ)`.
pub fn lift_phase(chart: &EmbeddingChart, psi: &[Expression], domain: &[Expression]) -> Result<PhaseFunction, CanonicalError> {
    let n = chart.dim_m;
    if psi.len() != n {
        return Err(CanonicalError::Dimension(format!("base maps need {n} components")));
    }
    let layout = chart.phase_layout(n);
    let primed = |e: &Expression| e.bind_params().substitute(&layout, &|s| Node::Var(n + s));
    let theta = |j: usize| Expression::var(2 * n + j, &layout);
    let phi = (0..n)
        .map(|i| (Expression::var(i, &layout) - primed(&psi[i])) * theta(i))
        .reduce(|a, b| a + b)
        .expect("n ≥ 1")
        .simplified();
    let source_covector: Vec<Node> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| primed(&psi[j].differentiate(i)) * theta(j))
                .reduce(|a, b| a + b)
                .expect("n ≥ 1")
                .simplified()
                .node()
                .clone()
        })
        .collect();
    let dom = domain
        .iter()
        .map(|d| {
            d.bind_params()
                .substitute(&layout, &|s| if s < n { Node::Var(n + s) } else { source_covector[s - n].clone() })
                .simplified()
        })
        .collect();
    Ok(PhaseFunction::new(phi, &["x", "y"], &["xp", "yp"], "th", dom)?)
}

/// Residuals of `g*ω = ω`, fiber 1-homogeneity, `g ∘ g⁻¹ = id` and
/// `T*₀M`-preservation on samples.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalReport {
    pub symplectic_residual: f64,
    pub homogeneity_residual: f64,
    pub inverse_residual: f64,
    pub preserves_nonzero: bool,
    pub samples: usize,
    pub worst_sample: Option<Vec<f64>>,
    /// Frame pair `(i, j)` of standard basis vectors realizing the worst
    /// symplectic residual, when one of them does.
    pub worst_frame: Option<(usize, usize)>,
}

impl CanonicalReport {
    pub const SYMPLECTIC_TOL: f64 = 1e-8;
    pub const HOMOGENEITY_TOL: f64 = 1e-9;

    pub fn canonical(&self) -> bool {
        self.symplectic_residual < Self::SYMPLECTIC_TOL && self.preserves_nonzero
    }

    pub fn homogeneous(&self) -> bool {
        self.homogeneity_residual < Self::HOMOGENEITY_TOL
    }

    pub fn passed(&self) -> bool {
        self.canonical() && self.homogeneous() && self.inverse_residual < 1e-8
    }
}

/// `max |ω(dg·u, dg·v) − ω(u, v)|` over all standard-basis pairs and random
/// unit pairs, plus `|g(m, λζ) − (ψ, λ·ζ-part)|/λ` for `λ ∈ {0.5, 2, 3.7}`.
pub fn validate_canonical(g: &CanonicalMap, samples: &[Vec<f64>]) -> Result<CanonicalReport, CanonicalError> {
    let n = g.chart.dim_m;
    let space = SymplecticSpace::Single { n };
    let d = 2 * n;
    let mut r: SampleRng = rng::seeded(0xc0de);
    let mut rep = CanonicalReport {
        symplectic_residual: 0.0,
        homogeneity_residual: 0.0,
        inverse_residual: 0.0,
        preserves_nonzero: true,
        samples: samples.len(),
        worst_sample: None,
        worst_frame: None,
    };
    let basis = |i: usize| -> Vec<f64> {
        let mut e = alloc::vec![0.0; d];
        e[i] = 1.0;
        e
    };
    for z in samples {
        let jac = g.jacobian(z)?;
        let push = |u: &[f64]| -> Vec<f64> { (&jac * DVector::from_column_slice(u)).iter().copied().collect() };
        type Pair = (Vec<f64>, Vec<f64>, Option<(usize, usize)>);
        let mut pairs: Vec<Pair> = Vec::new();
        for i in 0..d {
            for j in i + 1..d {
                pairs.push((basis(i), basis(j), Some((i, j))));
            }
        }
        for _ in 0..4 {
            pairs.push((rng::unit_vector(&mut r, d), rng::unit_vector(&mut r, d), None));
        }
        for (u, v, tag) in pairs {
            let res = (symplectic_form_value(space, &push(&u), &push(&v))? - symplectic_form_value(space, &u, &v)?).abs();
            if res > rep.symplectic_residual {
                rep.symplectic_residual = res;
                rep.worst_sample = Some(z.clone());
                rep.worst_frame = tag;
            }
        }
        let gz = g.apply(z)?;
        if linalg::norm(&gz[g.covector_positions()]) <= 1e-12 * linalg::norm(&z[n..]) {
            rep.preserves_nonzero = false;
        }
        for lam in [0.5, 2.0, 3.7] {
            let mut zl = z.clone();
            zl[n..].iter_mut().for_each(|v| *v *= lam);
            let gl = g.apply(&zl)?;
            let mut res = 0.0f64;
            for i in 0..d {
                let expect = if i < n { gz[i] } else { lam * gz[i] };
                res = res.max((gl[i] - expect).abs() / (1.0 + expect.abs()));
            }
            rep.homogeneity_residual = rep.homogeneity_residual.max(res);
        }
        let back = g.apply_inverse(&gz)?;
        rep.inverse_residual = rep.inverse_residual.max(linalg::dist(&back, z) / (1.0 + linalg::norm(z)));
    }
    Ok(rep)
}

/// `graph g = {(g(w′), w′)}` as constraints `z − g(z′) = 0` on the
/// `T*(M×M)` chart, with sampled points and the isotropy of their tangent
/// frames under `ω ⊖ ω′`.
#[derive(Clone, Debug)]
pub struct GraphLagrangian {
    pub submanifold: ConstraintSubmanifold,
    pub samples: Vec<Vec<f64>>,
    pub isotropy: f64,
}

pub const ISOTROPY_TOL: f64 = 1e-7;

fn to_primed(e: &Expression, product: &Arc<BlockLayout>, n: usize) -> Expression {
    // T*M (z, ζ) sits at positions 2n.. of (z, ζ, z′, ζ′)
    e.substitute(product, &|s| Node::Var(2 * n + s))
}

pub fn graph_lagrangian(g: &CanonicalMap, samples: &[Vec<f64>]) -> Result<GraphLagrangian, CanonicalError> {
    let n = g.chart.dim_m;
    let product = g.chart.product_layout();
    let constraints: Vec<Expression> =
        (0..2 * n).map(|i| Expression::var(i, &product) - to_primed(&g.forward[i], &product, n)).collect();
    let mut domain: Vec<Expression> = g.domain.iter().map(|d| to_primed(d, &product, n)).collect();
    // covectors of both factors stay nonzero
    let pp = product.range("pp").expect("pp block").start;
    domain.push(Expression::from_node(Node::Norm { start: pp, len: n }, &product));
    let sub = ConstraintSubmanifold::new(&product, constraints)?
        .with_expected_dim(2 * n)
        .conic(g.chart.covector_positions())
        .with_domain(domain)?;
    let mut pts = Vec::with_capacity(samples.len());
    let mut isotropy = 0.0f64;
    for w in samples {
        let mut c = g.apply(w)?;
        c.extend_from_slice(w);
        let frame = sub.tangent_basis(&c)?;
        isotropy = isotropy.max(max_isotropy(SymplecticSpace::Product { n }, &frame)?);
        pts.push(c);
    }
    if isotropy > ISOTROPY_TOL {
        return Err(CanonicalError::NotLagrangian { isotropy });
    }
    Ok(GraphLagrangian { submanifold: sub, samples: pts, isotropy })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorollaryOptions {
    pub clean: CleanOptions,
    pub intersection: IntersectionOptions,
    /// Margin certifying `N*₀X ∩ g(N*₀X) = ∅`.
    pub delta: f64,
    /// Base box for the condition-2 multi-start, `[-r, r]^k`.
    pub base_radius: f64,
    pub starts_per_axis: usize,
    pub graph_samples: usize,
    pub seed: u64,
}

impl Default for CorollaryOptions {
    fn default() -> Self {
        Self {
            clean: CleanOptions::default(),
            intersection: IntersectionOptions::default(),
            delta: 1e-3,
            base_radius: 2.0,
            starts_per_axis: 9,
            graph_samples: 40,
            seed: 7,
        }
    }
}

/// Corollary-level verdicts and their graph-level counterparts.
#[derive(Clone, Debug, PartialEq)]
pub struct CorollaryReport {
    /// Cleanness of `T*₀M|_X ∩ g(T*₀M|_X)`; `None` when it is empty.
    pub condition1: Option<CleanReport>,
    pub condition1_passed: bool,
    /// `min` over `w′ ∈ N*₀X` (unit covector, base in the box) of the
    /// distance of `g(w′)` to `N*₀X`; `∞` when `N*₀X` misses the domain.
    pub condition2_margin: f64,
    pub condition2_passed: bool,
    /// `(g(w′), w′)` at the minimum.
    pub condition2_witness: Option<Vec<f64>>,
    pub theorem_condition1: bool,
    pub theorem_condition2: bool,
}

impl CorollaryReport {
    pub fn passed(&self) -> bool {
        self.condition1_passed && self.condition2_passed
    }

    pub fn agree(&self) -> bool {
        self.condition1_passed == self.theorem_condition1 && self.condition2_passed == self.theorem_condition2
    }

    /// Description of a disagreement between the two levels, if any.
    pub fn graph_lemma_violation(&self) -> Option<String> {
        (!self.agree()).then(|| {
            format!(
                "graph lemma violated: corollary (c1 {}, c2 {}) vs theorem on the graph (c1 {}, c2 {})",
                self.condition1_passed, self.condition2_passed, self.theorem_condition1, self.theorem_condition2
            )
        })
    }
}

/// Condition 1 via [`clean_intersection_check`] on `{y = 0}` and
/// `{(g⁻¹z)_y = 0}`; condition 2 by multi-start Gauss–Newton on
/// `F(x′, q̂) = (g(w′)_y, g(w′)_p / |g(w′)_ζ|)` over `w′ = (x′, 0, 0, q̂/|q̂|)`;
/// both cross-checked by running the Lagrangian-level conditions on the
/// graph.
pub fn check_corollary_conditions(g: &CanonicalMap, opts: &CorollaryOptions) -> Result<CorollaryReport, CanonicalError> {
    let chart = g.chart;
    let (n, k) = (chart.dim_m, chart.dim_x);
    let layout = &g.layout;
    let cov: Vec<usize> = (n..2 * n).collect();
    let ys: Vec<usize> = (k..n).collect();
    let a = ConstraintSubmanifold::coordinate_plane(layout, &ys)?.conic(cov.clone()).with_domain(g.domain.clone())?;
    let b_cons: Vec<Expression> = ys.iter().map(|&y| g.inverse[y].clone()).collect();
    let pulled_domain: Vec<Expression> =
        g.domain.iter().map(|d| d.substitute(layout, &|s| g.inverse[s].node().clone()).simplified()).collect();
    let b = ConstraintSubmanifold::new(layout, b_cons)?
        .with_expected_dim(2 * n - chart.nu)
        .conic(cov.clone())
        .with_domain(pulled_domain)?;
    let cap = a.intersect(&b)?;
    let mut r = rng::seeded(opts.seed);
    let seeds: Vec<Vec<f64>> = (0..120)
        .map(|_| {
            let mut s: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
            s.extend(rng::unit_vector(&mut r, n));
            s
        })
        .collect();
    let solved = cap.solve_points(&seeds, &SolveOptions::default(), 1e-6)?;
    let samples: Vec<Vec<f64>> = solved.points.into_iter().filter(|p| a.in_domain(p) && b.in_domain(p)).collect();
    let condition1 = if samples.is_empty() { None } else { Some(clean_intersection_check(&a, &b, &samples, &opts.clean)?) };
    let condition1_passed = condition1.as_ref().is_none_or(|c| c.clean());

    let (margin, witness) = conormal_margin(g, opts)?;
    let condition2_passed = margin >= opts.delta;

    let gs = sample_cotangent(g, opts.graph_samples, opts.seed ^ 0x9a);
    let graph = graph_lagrangian(g, &gs)?;
    let lag = ParametrizedLagrangian::from_graph(&graph.submanifold, graph.samples.clone(), &chart)?;
    let lxx = lambda_xx_samples(&lag, &opts.intersection)?;
    let t1 = check_condition_clean(&lag, &lxx, &opts.clean)?;
    let t2 = check_condition_conormal(&lag, &lxx, opts.delta)?;
    Ok(CorollaryReport {
        condition1,
        condition1_passed,
        condition2_margin: margin,
        condition2_passed,
        condition2_witness: witness,
        theorem_condition1: t1.passed(),
        theorem_condition2: t2.passed,
    })
}

fn conormal_point(chart: &EmbeddingChart, v: &[f64]) -> Vec<f64> {
    let (n, k) = (chart.dim_m, chart.dim_x);
    let q = &v[k..];
    let s = linalg::norm(q);
    let mut w = alloc::vec![0.0; 2 * n];
    w[..k].copy_from_slice(&v[..k]);
    for (i, qi) in q.iter().enumerate() {
        w[n + k + i] = qi / s;
    }
    w
}

fn conormal_residual(g: &CanonicalMap, v: &[f64]) -> Option<Vec<f64>> {
    let chart = g.chart;
    let (n, k) = (chart.dim_m, chart.dim_x);
    let w = conormal_point(&chart, v);
    if !g.in_domain(&w) {
        return None;
    }
    let gw = g.apply(&w).ok()?;
    if !g.in_domain(&gw) {
        return None;
    }
    let s = linalg::norm(&gw[n..]);
    let mut f: Vec<f64> = gw[k..n].to_vec();
    f.extend(gw[n..n + k].iter().map(|p| p / s));
    Some(f)
}

fn conormal_margin(g: &CanonicalMap, opts: &CorollaryOptions) -> Result<(f64, Option<Vec<f64>>), CanonicalError> {
    let chart = g.chart;
    let (k, nu) = (chart.dim_x, chart.nu);
    let m = opts.starts_per_axis.max(2);
    let rad = opts.base_radius;
    let mut r = rng::seeded(opts.seed ^ 0xc2);
    let dirs: Vec<Vec<f64>> = if nu == 1 {
        alloc::vec![alloc::vec![1.0], alloc::vec![-1.0]]
    } else {
        (0..8 * nu).map(|_| rng::unit_vector(&mut r, nu)).collect()
    };
    let total = m.pow(k as u32);
    let mut best: (f64, Option<Vec<f64>>) = (f64::INFINITY, None);
    for idx in 0..total {
        let mut x = Vec::with_capacity(k);
        let mut t = idx;
        for _ in 0..k {
            x.push(-rad + 2.0 * rad * (t % m) as f64 / (m - 1) as f64);
            t /= m;
        }
        for d in &dirs {
            let mut v = x.clone();
            v.extend_from_slice(d);
            let Some(mut f) = conormal_residual(g, &v) else { continue };
            let mut val = linalg::norm(&f);
            for _ in 0..50 {
                if val < 1e-14 {
                    break;
                }
                let h = 1e-7;
                let mut jac = DMatrix::zeros(f.len(), v.len());
                let mut ok = true;
                for c in 0..v.len() {
                    let mut vp = v.clone();
                    vp[c] += h;
                    match conormal_residual(g, &vp) {
                        Some(fp) => {
                            for i in 0..f.len() {
                                jac[(i, c)] = (fp[i] - f[i]) / h;
                            }
                        }
                        None => ok = false,
                    }
                }
                if !ok {
                    break;
                }
                let step = linalg::lstsq(&jac, &DVector::from_vec(f.clone()), 1e-12);
                let mut lam = 1.0;
                let mut moved = false;
                for _ in 0..20 {
                    let mut trial: Vec<f64> = v.iter().zip(step.iter()).map(|(a, s)| a - lam * s).collect();
                    trial[..k].iter_mut().for_each(|xi| *xi = xi.clamp(-rad, rad));
                    let qn = linalg::norm(&trial[k..]);
                    if qn > 1e-12 {
                        trial[k..].iter_mut().for_each(|q| *q /= qn);
                        if let Some(ft) = conormal_residual(g, &trial) {
                            let tv = linalg::norm(&ft);
                            if tv < val {
                                moved = val - tv > 1e-15;
                                v = trial;
                                f = ft;
                                val = tv;
                                break;
                            }
                        }
                    }
                    lam *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            if val < best.0 {
                let w = conormal_point(&chart, &v);
                let mut wit = g.apply(&w)?;
                wit.extend_from_slice(&w);
                best = (val, Some(wit));
            }
        }
    }
    Ok(best)
}

/// `ord Φ < −codim X` (strict).
pub fn check_order_bound(order_phi: f64, chart: &EmbeddingChart) -> bool {
    order_phi < -(chart.nu as f64)
}

#[cfg(test)]
mod tests;
