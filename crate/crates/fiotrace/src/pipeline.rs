//! The check → amplitude → oracle workflow over a validated scenario.

use std::f64::consts::PI;

use fiotrace_core::canonical::{
    check_corollary_conditions, check_order_bound, graph_lagrangian, sample_cotangent, validate_canonical, CanonicalMap,
    CanonicalReport, CorollaryOptions, CorollaryReport, ISOTROPY_TOL,
};
use fiotrace_core::geom::{slot_minus, CleanOptions, ConstraintSubmanifold, SolveOptions};
use fiotrace_core::oracle::{
    amplitude_oracle, trace_kernel_value, wavepacket_operator_check, OracleError, WavePacket,
};
use fiotrace_core::phase::{
    excess_of, lagrangian_samples, solve_critical_set, sphere_grid, Amplitude, CriticalManifold, CriticalOptions,
    ExcessCertificate, PhaseError, PhaseFunction, SeedSpec,
};
use fiotrace_core::rng;
use fiotrace_core::stationary::{
    compute_theta_splitting, fit_canonical_chart, AmplitudeResult, ChartFit, PrefactorMode, StationaryOptions,
    StationaryProblem,
};
use fiotrace_core::trace::{
    check_condition_clean, check_condition_conormal, check_sobolev_window, diagram_residual, lambda_xx_samples,
    restrict_phase_and_amplitude, trace_lagrangian, trace_order, verify_parameter_space_cleanness, IntersectionOptions,
    LemmaReport, ParametrizedLagrangian, RestrictedPhase, TraceError, TraceReport, TracedLagrangian,
};
use num_complex::Complex64;
use thiserror::Error;

use crate::config::ScenarioConfig;

/// Relative tolerance for oracle-versus-prediction verdicts.
pub const ORACLE_TOL: f64 = 0.05;
/// Tolerance on the packet center displacement.
pub const PACKET_TOL: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("checks did not pass (verdict {0}); rerun with --force to compute non-certified output")]
    NotCertified(&'static str),
    #[error("{0}")]
    Unsupported(String),
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    Info,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Info => "info",
        }
    }

    fn of(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Run downstream stages after failed checks, labelling output non-certified.
    pub force: bool,
    pub prefactor: PrefactorMode,
}

/// One row of the check table.
#[derive(Clone, Debug)]
pub struct CheckRow {
    pub name: String,
    pub verdict: Verdict,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

/// Results of the phase-level (Lagrangian-level) pipeline.
#[derive(Clone, Debug)]
pub struct PhaseAnalysis {
    pub homogeneity_residual: f64,
    pub gradient_margin: f64,
    pub critical: CriticalManifold,
    pub full_excess: ExcessCertificate,
    pub isotropy_lambda: f64,
    pub lambda_xx_samples: usize,
    pub trace: TraceReport,
    pub traced: Option<TracedLagrangian>,
    /// Rank- and dimension-based excess of the restricted phase.
    pub restricted_excess: Option<ExcessCertificate>,
    pub lemma: Option<LemmaReport>,
    pub diagram_residual: Option<f64>,
    pub chart_fit: Option<Result<ChartFit, String>>,
    pub order_phi: f64,
}

#[derive(Clone, Debug)]
pub struct CanonicalAnalysis {
    pub validation: CanonicalReport,
    pub graph_isotropy: f64,
    pub corollary: CorollaryReport,
    pub order_bound: bool,
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub scenario: String,
    pub seed: u64,
    pub source: &'static str,
    pub prefactor: PrefactorMode,
    pub phase: Option<PhaseAnalysis>,
    pub canonical: Option<CanonicalAnalysis>,
    pub checks: Vec<CheckRow>,
    /// Ordered key-value summary.
    pub entries: Vec<(String, String)>,
    pub verdict: Verdict,
    pub failed_conditions: Vec<&'static str>,
}

impl CheckReport {
    fn new(cfg: &ScenarioConfig, opts: &RunOptions) -> Self {
        Self {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            source: cfg.source.kind(),
            prefactor: opts.prefactor,
            phase: None,
            canonical: None,
            checks: Vec::new(),
            entries: Vec::new(),
            verdict: Verdict::Pass,
            failed_conditions: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, verdict: Verdict, value: Option<f64>, threshold: Option<f64>, detail: impl Into<String>) {
        self.checks.push(CheckRow { name: name.into(), verdict, value, threshold, detail: detail.into() });
    }

    fn entry(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    fn condition_failed(&mut self, which: &'static str) {
        if !self.failed_conditions.contains(&which) {
            self.failed_conditions.push(which);
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// 0 on pass, 2 on a failed check, 3 when inconclusive.
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::Pass | Verdict::Info => 0,
            Verdict::Fail => 2,
            Verdict::Inconclusive => 3,
        }
    }

    pub fn find(&self, name: &str) -> Option<&CheckRow> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn finish(&mut self) {
        let any = |v: Verdict| self.checks.iter().any(|c| c.verdict == v);
        self.verdict = if any(Verdict::Fail) {
            Verdict::Fail
        } else if any(Verdict::Inconclusive) {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        };
        let failed = if self.failed_conditions.is_empty() { "none".to_string() } else { self.failed_conditions.join(",") };
        self.entry("failed_conditions", failed);
        self.entry("verdict", self.verdict.label());
        self.entry("exit_code", self.exit_code());
    }
}

/// Seeds of the individual samplers, all derived from the scenario seed.
struct Seeds {
    critical: u64,
    intersection: u64,
    clean: u64,
    corollary: u64,
    homogeneity: u64,
    canonical: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        Self {
            critical: seed,
            intersection: seed.wrapping_add(1),
            clean: seed ^ 0x5eed,
            corollary: seed.wrapping_add(6),
            homogeneity: seed ^ 0xa11ce,
            canonical: seed ^ 0xc0de,
        }
    }
}

fn clean_options(cfg: &ScenarioConfig) -> CleanOptions {
    CleanOptions { min_samples: cfg.solver.clean_samples, seed: Seeds::new(cfg.seed).clean, ..CleanOptions::default() }
}

fn critical_options(cfg: &ScenarioConfig) -> CriticalOptions {
    let b = cfg.solver.base_box;
    CriticalOptions {
        seeds: SeedSpec { base_box: (-b, b), theta_directions: cfg.solver.theta_directions, seed: Seeds::new(cfg.seed).critical },
        clean: clean_options(cfg),
        ..CriticalOptions::default()
    }
}

fn intersection_options(cfg: &ScenarioConfig) -> IntersectionOptions {
    let b = cfg.solver.base_box;
    IntersectionOptions {
        random_seeds: cfg.solver.intersection_seeds,
        base_box: (-b, b),
        seed: Seeds::new(cfg.seed).intersection,
        ..IntersectionOptions::default()
    }
}

/// Critical set with enough samples for the cleanness checks: narrow domain
/// cones catch few seed directions, so the direction count is doubled (up to
/// 16×) until `clean_samples` points are found.
fn critical_set(phase: &PhaseFunction, cfg: &ScenarioConfig) -> Result<CriticalManifold, PhaseError> {
    let mut opts = critical_options(cfg);
    let mut crit = solve_critical_set(phase, &opts)?;
    for _ in 0..4 {
        if crit.points.len() >= cfg.solver.clean_samples {
            break;
        }
        opts.seeds.theta_directions *= 2;
        crit = solve_critical_set(phase, &opts)?;
    }
    Ok(crit)
}

/// Random points of the phase domain: base in the box, `|θ| ∈ [0.5, 2]`.
pub fn phase_samples(phase: &PhaseFunction, count: usize, base_box: f64, seed: u64) -> Vec<Vec<f64>> {
    let n = phase.layout().total_dim();
    let mut r = rng::seeded(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 100 {
        if out.len() == count {
            break;
        }
        let mut c: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -base_box, base_box)).collect();
        let rad = rng::uniform(&mut r, 0.5, 2.0);
        for (&s, v) in phase.theta_slots().iter().zip(rng::unit_vector(&mut r, phase.n_theta())) {
            c[s] = rad * v;
        }
        if phase.in_domain(&c) {
            out.push(c);
        }
    }
    out
}

/// `ord Φ = m − (n − N − e)/2` for an amplitude of symbol order `m`.
pub fn operator_order(symbol_order: f64, dim_m: usize, n_theta: usize, excess: usize) -> f64 {
    symbol_order - (dim_m as f64 - n_theta as f64 - excess as f64) / 2.0
}

/// Shortest round-trip decimal, in exponent form outside `[1e-5, 1e16)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| num(x)).collect();
    format!("[{}]", parts.join(" "))
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

fn fmt_optf(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), num)
}

/// Phase validation → critical set → Λ samples → conditions 1–2 →
/// excess, order and Sobolev window, plus the canonical-level conditions
/// for canonical sources. Condition failures end up in the report, not in
/// the error.
pub fn run_check(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<CheckReport, PipelineError> {
    let mut rep = CheckReport::new(cfg, opts);
    rep.entry("scenario", &cfg.name);
    rep.entry("seed", cfg.seed);
    rep.entry("source", cfg.source.kind());
    rep.entry("dim_m", cfg.embedding.dim_m);
    rep.entry("dim_x", cfg.embedding.dim_x);
    rep.entry("codim_x", cfg.embedding.nu);
    rep.entry("prefactor_mode", opts.prefactor.name());
    for (k, v) in &cfg.params {
        rep.entry(&format!("param.{k}"), num(*v));
    }
    if let Some(g) = cfg.source.canonical() {
        let c = analyze_canonical(cfg, g, &mut rep)?;
        rep.canonical = Some(c);
    }
    if let Some(phase) = cfg.source.phase() {
        let p = analyze_phase(cfg, phase, &mut rep)?;
        rep.phase = p;
    }
    if let (Some(c), Some(p)) = (&rep.canonical, &rep.phase) {
        let (c1, c2) = (p.trace.condition1.passed(), p.trace.condition2.passed);
        let agree = c.corollary.condition1_passed == c1 && c.corollary.condition2_passed == c2;
        let detail = format!(
            "corollary (c1 {}, c2 {}) vs phase (c1 {c1}, c2 {c2})",
            c.corollary.condition1_passed, c.corollary.condition2_passed
        );
        rep.check("agreement.phase_vs_corollary", if agree { Verdict::Pass } else { Verdict::Inconclusive }, None, None, detail);
    }
    rep.finish();
    Ok(rep)
}

fn analyze_canonical(cfg: &ScenarioConfig, g: &CanonicalMap, rep: &mut CheckReport) -> Result<CanonicalAnalysis, PipelineError> {
    let seeds = Seeds::new(cfg.seed);
    let samples = sample_cotangent(g, cfg.solver.canonical_samples, seeds.canonical);
    if samples.is_empty() {
        return Err(PipelineError::Stage { stage: "canonical", message: "no samples in the domain of the map".into() });
    }
    let validation = validate_canonical(g, &samples).map_err(stage("canonical"))?;
    rep.check(
        "canonical.symplectic",
        Verdict::of(validation.canonical()),
        Some(validation.symplectic_residual),
        Some(CanonicalReport::SYMPLECTIC_TOL),
        format!("worst frame {:?}", validation.worst_frame),
    );
    rep.check(
        "canonical.homogeneous",
        Verdict::of(validation.homogeneous()),
        Some(validation.homogeneity_residual),
        Some(CanonicalReport::HOMOGENEITY_TOL),
        "",
    );
    rep.check(
        "canonical.inverse",
        Verdict::of(validation.passed()),
        Some(validation.inverse_residual),
        None,
        format!("preserves nonzero covectors: {}", validation.preserves_nonzero),
    );
    let graph_isotropy = match graph_lagrangian(g, &samples) {
        Ok(gr) => gr.isotropy,
        Err(e) => {
            rep.check("canonical.graph_isotropy", Verdict::Fail, None, Some(ISOTROPY_TOL), e.to_string());
            return Err(PipelineError::Stage { stage: "canonical", message: e.to_string() });
        }
    };
    rep.check("canonical.graph_isotropy", Verdict::of(graph_isotropy < ISOTROPY_TOL), Some(graph_isotropy), Some(ISOTROPY_TOL), "");

    let copts = CorollaryOptions {
        clean: clean_options(cfg),
        intersection: intersection_options(cfg),
        delta: cfg.solver.delta,
        base_radius: cfg.solver.base_radius,
        starts_per_axis: cfg.solver.starts_per_axis,
        graph_samples: cfg.solver.canonical_samples,
        seed: seeds.corollary,
    };
    let cor = check_corollary_conditions(g, &copts).map_err(stage("corollary"))?;
    let c1_detail = match &cor.condition1 {
        None => "T*M|X ∩ g(T*M|X) is empty".to_string(),
        Some(c) => format!(
            "intersection_dim {} local_dim {} tangent gap {} samples {}",
            fmt_opt(c.intersection_dim),
            fmt_opt(c.local_dim),
            c.worst_gap,
            c.samples_used
        ),
    };
    let gap = cor.condition1.as_ref().map(|c| c.worst_gap);
    rep.check("corollary.condition1", Verdict::of(cor.condition1_passed), gap, Some(0.0), c1_detail);
    let witness = cor.condition2_witness.as_deref().map_or_else(|| "none".into(), fmt_vec);
    rep.check(
        "corollary.condition2",
        Verdict::of(cor.condition2_passed),
        Some(cor.condition2_margin),
        Some(cfg.solver.delta),
        format!("witness {witness}"),
    );
    if !cor.condition1_passed {
        rep.condition_failed("condition1");
    }
    if !cor.condition2_passed {
        rep.condition_failed("condition2");
    }
    rep.check(
        "agreement.graph_lemma",
        if cor.agree() { Verdict::Pass } else { Verdict::Inconclusive },
        None,
        None,
        cor.graph_lemma_violation().unwrap_or_else(|| {
            format!("theorem on the graph: c1 {}, c2 {}", cor.theorem_condition1, cor.theorem_condition2)
        }),
    );
    rep.entry("corollary.condition1", if cor.condition1_passed { "pass" } else { "fail" });
    rep.entry("corollary.condition1.tangent_gap", fmt_optf(gap));
    rep.entry("corollary.condition2", if cor.condition2_passed { "pass" } else { "fail" });
    rep.entry("corollary.condition2.margin", num(cor.condition2_margin));
    rep.entry("corollary.condition2.witness", witness);
    rep.entry("graph.theorem_condition1", cor.theorem_condition1);
    rep.entry("graph.theorem_condition2", cor.theorem_condition2);

    let order = cfg.amplitude.as_ref().map_or(0.0, |a| a.order);
    let order_bound = check_order_bound(order, &cfg.embedding);
    rep.check(
        "corollary.order_bound",
        Verdict::Info,
        Some(order),
        Some(-(cfg.embedding.nu as f64)),
        if order_bound { "ord < -codim X: bounded on the whole Sobolev scale" } else { "ord ≥ -codim X: no Sobolev-scale bound" },
    );
    Ok(CanonicalAnalysis { validation, graph_isotropy, corollary: cor, order_bound })
}

fn analyze_phase(cfg: &ScenarioConfig, phase: &PhaseFunction, rep: &mut CheckReport) -> Result<Option<PhaseAnalysis>, PipelineError> {
    let seeds = Seeds::new(cfg.seed);
    let emb = cfg.embedding;
    let k = emb.dim_x;
    rep.entry("n_theta", phase.n_theta());

    let samples = phase_samples(phase, cfg.solver.homogeneity_samples, cfg.solver.base_box, seeds.homogeneity);
    let mut validated = phase.clone();
    let margin = match validated.validate(&samples, cfg.solver.homogeneity_tol) {
        Ok(m) => m,
        Err(e) => {
            rep.check("phase.valid", Verdict::Fail, None, Some(cfg.solver.homogeneity_tol), e.to_string());
            rep.condition_failed("phase");
            return Ok(None);
        }
    };
    let homog = validated.homogeneity().map_or(0.0, |h| h.worst_residual());
    rep.check("phase.homogeneity", Verdict::Pass, Some(homog), Some(cfg.solver.homogeneity_tol), format!("{} samples", samples.len()));
    rep.check("phase.gradient", Verdict::Pass, Some(margin), Some(0.0), "smallest normalized |∇φ|");

    let crit = match critical_set(phase, cfg) {
        Ok(c) => c,
        Err(e) => {
            rep.check("phase.critical_set", Verdict::Fail, None, None, e.to_string());
            rep.condition_failed("phase");
            return Ok(None);
        }
    };
    rep.entry("critical.samples", crit.points.len());
    rep.entry("critical.dim", crit.dim);
    let full_excess = match excess_of(phase, &crit, &clean_options(cfg)) {
        Ok(x) => x,
        Err(e) => {
            rep.check("phase.clean", Verdict::Fail, None, None, e.to_string());
            rep.condition_failed("phase");
            return Ok(None);
        }
    };
    rep.check(
        "phase.clean",
        if crit.marginal { Verdict::Inconclusive } else { Verdict::Pass },
        Some(crit.rank_gap),
        None,
        format!("excess {} (rank {}, sampled dim {})", full_excess.excess, crit.rank_of_matrix, full_excess.sampled_dim),
    );
    let lam = lagrangian_samples(phase, &crit, 1e-8).map_err(stage("phase"))?;
    rep.check("lambda.isotropy", Verdict::of(lam.isotropy < ISOTROPY_TOL), Some(lam.isotropy), Some(ISOTROPY_TOL), "");

    let lag = ParametrizedLagrangian::from_phase(phase, &crit, &emb).map_err(stage("trace"))?;
    let lxx = match lambda_xx_samples(&lag, &intersection_options(cfg)) {
        Ok(l) => l,
        Err(e @ TraceError::Inconclusive { .. }) => {
            rep.check("theorem.lambda_xx", Verdict::Inconclusive, None, None, e.to_string());
            return Ok(None);
        }
        Err(e) => return Err(PipelineError::Stage { stage: "trace", message: e.to_string() }),
    };
    rep.entry("lambda_xx.samples", lxx.params.len());
    rep.entry("lambda_xx.empty", lxx.is_empty());
    let c1 = match check_condition_clean(&lag, &lxx, &clean_options(cfg)) {
        Ok(c) => c,
        Err(e) => {
            rep.check("theorem.condition1", Verdict::Inconclusive, None, None, e.to_string());
            return Ok(None);
        }
    };
    let c2 = check_condition_conormal(&lag, &lxx, cfg.solver.delta).map_err(stage("trace"))?;
    let c1_detail = match &c1.report {
        None => "Λ_XX is empty; the trace is smoothing".to_string(),
        Some(r) => format!(
            "intersection_dim {} local_dim {} tangent gap {} excess over transversal {}",
            fmt_opt(r.intersection_dim),
            fmt_opt(r.local_dim),
            r.worst_gap,
            fmt_opt(r.excess_over_transversal)
        ),
    };
    let gap = c1.report.as_ref().map(|r| r.worst_gap);
    rep.check("theorem.condition1", Verdict::of(c1.passed()), gap, Some(0.0), c1_detail);
    let witness = c2.witness.as_deref().map_or_else(|| "none".into(), fmt_vec);
    rep.check(
        "theorem.condition2",
        Verdict::of(c2.passed),
        Some(c2.g_min),
        Some(c2.delta),
        if c2.vacuous { "vacuous (Λ_XX empty)".to_string() } else { format!("witness {witness}") },
    );
    if !c1.passed() {
        rep.condition_failed("condition1");
    }
    if !c2.passed {
        rep.condition_failed("condition2");
    }
    rep.entry("condition1", if c1.passed() { "pass" } else { "fail" });
    rep.entry("condition1.tangent_gap", fmt_optf(gap));
    rep.entry("condition2", if c2.passed { "pass" } else { "fail" });
    rep.entry("condition2.g_min", num(c2.g_min));
    rep.entry("condition2.witness", &witness);

    let order_phi = operator_order(cfg.amplitude.as_ref().map_or(0.0, |a| a.order), emb.dim_m, phase.n_theta(), full_excess.excess);
    let mut analysis = PhaseAnalysis {
        homogeneity_residual: homog,
        gradient_margin: margin,
        full_excess,
        isotropy_lambda: lam.isotropy,
        lambda_xx_samples: lxx.params.len(),
        trace: TraceReport {
            condition1: c1.clone(),
            condition2: c2.clone(),
            excess_e: None,
            dim_lambda_xx: c1.dim_lambda_xx,
            traced_order: None,
            sobolev_window: check_sobolev_window(order_phi, &emb),
            parameter_space_cleanness: None,
            empty: lxx.is_empty(),
        },
        critical: crit,
        traced: None,
        restricted_excess: None,
        lemma: None,
        diagram_residual: None,
        chart_fit: None,
        order_phi,
    };
    rep.entry("order_phi", num(order_phi));
    match analysis.trace.sobolev_window {
        Some((lo, hi)) => rep.entry("sobolev_window", format!("({lo}, {hi}) formally admissible")),
        None => rep.entry("sobolev_window", "empty (formulas computed formally)"),
    }
    let Some(dim_lxx) = c1.dim_lambda_xx.filter(|_| c1.passed()) else {
        return Ok(Some(analysis));
    };
    let e_lambda = dim_lxx as i64 - 2 * k as i64;
    analysis.trace.excess_e = usize::try_from(e_lambda).ok();
    analysis.trace.traced_order = Some(trace_order(order_phi, &emb, dim_lxx));
    rep.entry("dim_lambda_xx", dim_lxx);
    rep.entry("traced_order", num(analysis.trace.traced_order.unwrap()));

    match trace_lagrangian(&lag, &lxx, dim_lxx) {
        Ok(t) => {
            rep.check("traced.isotropy", Verdict::of(t.isotropy < ISOTROPY_TOL), Some(t.isotropy), Some(ISOTROPY_TOL), "");
            rep.check(
                "traced.conic",
                Verdict::of(!t.zero_covector),
                None,
                None,
                if t.zero_covector { "i!(Λ) meets the zero section" } else { "covectors stay nonzero" },
            );
            let fit = fit_canonical_chart(&t, &cfg.chart).map_err(|e| e.to_string());
            match &fit {
                Ok(f) => rep.check("chart.fit", Verdict::Pass, Some(f.min_singular), None, match f.canonical_residual {
                    Some(r) => format!("S(w) canonical residual {r}"),
                    None => "no user S(w)".into(),
                }),
                Err(m) => rep.check("chart.fit", Verdict::Fail, None, None, m.clone()),
            }
            analysis.chart_fit = Some(fit);
            analysis.traced = Some(t);
        }
        Err(e) => rep.check("traced.immersion", Verdict::Fail, None, None, e.to_string()),
    }

    let (restricted, _) = restrict_phase_and_amplitude(phase, &[], &emb).map_err(stage("trace"))?;
    match critical_set(&restricted.phase, cfg) {
        Ok(crit_xx) => {
            match excess_of(&restricted.phase, &crit_xx, &clean_options(cfg)) {
                Ok(x) => {
                    let ok = x.rank_based as i64 == e_lambda && x.dim_based as i64 == e_lambda;
                    rep.check(
                        "excess",
                        Verdict::of(ok),
                        Some(e_lambda as f64),
                        None,
                        format!("rank-based {} dimension-based {} dim Λ_XX - 2 dim X {e_lambda}", x.rank_based, x.dim_based),
                    );
                    rep.entry("excess.rank_based", x.rank_based);
                    rep.entry("excess.dimension_based", x.dim_based);
                    analysis.restricted_excess = Some(x);
                }
                Err(e) => rep.check("excess", Verdict::Fail, None, None, e.to_string()),
            }
            match verify_parameter_space_cleanness(&restricted, &crit_xx, &clean_options(cfg)) {
                Ok(l) => {
                    rep.check("lemma.parameter_space", Verdict::of(l.passed), Some(l.embedding_residual), Some(1e-8), "");
                    analysis.trace.parameter_space_cleanness = Some(l.passed);
                    analysis.lemma = Some(l);
                }
                Err(e) => rep.check("lemma.parameter_space", Verdict::Fail, None, None, e.to_string()),
            }
            let d = diagram_residual(&restricted, &crit_xx).map_err(stage("trace"))?;
            rep.check("lemma.diagram", Verdict::of(d < 1e-10), Some(d), Some(1e-10), "");
            analysis.diagram_residual = Some(d);
        }
        Err(e) => rep.check("excess", Verdict::Fail, None, None, format!("restricted critical set: {e}")),
    }
    rep.entry("excess_e", e_lambda);
    Ok(Some(analysis))
}

/// Restricted phase, its critical set and the big-phase problem on the chart.
pub struct StationarySetup {
    pub restricted: RestrictedPhase,
    pub crit: CriticalManifold,
    pub problem: StationaryProblem,
    pub amplitude: Amplitude,
}

pub fn stationary_setup(cfg: &ScenarioConfig, prefactor: PrefactorMode) -> Result<StationarySetup, PipelineError> {
    let phase = cfg
        .source
        .phase()
        .ok_or_else(|| PipelineError::Unsupported("amplitudes need a phase function ([phase] or a lift)".into()))?;
    let amp = cfg.amplitude.as_ref().expect("phase sources always carry an amplitude");
    let mut parts = vec![amp.re.clone()];
    parts.extend(amp.im.clone());
    let (restricted, restricted_amp) = restrict_phase_and_amplitude(phase, &parts, &cfg.embedding).map_err(stage("trace"))?;
    let amplitude = Amplitude::new(restricted_amp[0].clone(), restricted_amp.get(1).cloned()).map_err(stage("phase"))?;
    let crit = critical_set(&restricted.phase, cfg).map_err(stage("phase"))?;
    let split = compute_theta_splitting(&restricted.phase, &crit, 0).map_err(stage("statphase"))?;
    let opts = StationaryOptions { prefactor, ..StationaryOptions::default() };
    let problem = StationaryProblem::new(&restricted.phase, &crit, &cfg.chart, split, cfg.embedding.dim_m, opts)
        .map_err(stage("statphase"))?;
    Ok(StationarySetup { restricted, crit, problem, amplitude })
}

/// Grid of chart points `w` for the amplitude stage:
/// `ray:W:λ1,λ2,...` (conic scaling of W), `line:W0:W1:n` or `points:W;W;...`,
/// with `W` a comma-separated coordinate list.
pub fn parse_w_grid(spec: &str, cfg: &ScenarioConfig) -> Result<Vec<Vec<f64>>, String> {
    let k2 = 2 * cfg.chart.dim_x();
    let point = |s: &str| -> Result<Vec<f64>, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad number `{x}` in w-grid")))
            .collect::<Result<_, _>>()?;
        if v.len() != k2 {
            return Err(format!("w-points need {k2} coordinates, got {}", v.len()));
        }
        Ok(v)
    };
    let (kind, rest) = spec.split_once(':').ok_or("w-grid must start with ray:, line: or points:")?;
    match kind {
        "ray" => {
            let (w, ls) = rest.rsplit_once(':').ok_or("ray:W:λ1,λ2,...")?;
            let w = if w == "w0" { cfg.w0.clone().ok_or("scenario has no w0")? } else { point(w)? };
            let lambdas = parse_sweep(ls)?;
            Ok(lambdas.iter().map(|&l| cfg.chart.scale(&w, l)).collect())
        }
        "line" => {
            let parts: Vec<&str> = rest.split(':').collect();
            let [a, b, n] = parts[..] else { return Err("line:W0:W1:n".into()) };
            let (a, b) = (point(a)?, point(b)?);
            let n: usize = n.trim().parse().map_err(|_| "line needs an integer count".to_string())?;
            if n < 2 {
                return Err("line needs at least 2 points".into());
            }
            Ok((0..n)
                .map(|i| {
                    let t = i as f64 / (n - 1) as f64;
                    a.iter().zip(&b).map(|(x, y)| x + t * (y - x)).collect()
                })
                .collect())
        }
        "points" => rest.split(';').map(point).collect(),
        _ => Err(format!("unknown w-grid kind `{kind}`")),
    }
}

/// Comma-separated list of positive values.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>, String> {
    spec.split(',')
        .map(|x| match x.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("bad sweep value `{x}`")),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct AmplitudeRow {
    pub w: Vec<f64>,
    pub result: Result<AmplitudeResult, String>,
    pub prefactor: PrefactorMode,
    pub certified: bool,
}

fn certify(report: &CheckReport, opts: &RunOptions) -> Result<bool, PipelineError> {
    match (report.passed(), opts.force) {
        (true, _) => Ok(true),
        (false, true) => Ok(false),
        (false, false) => Err(PipelineError::NotCertified(report.verdict.label())),
    }
}

/// `b₀` on every grid point; per-point failures are kept in the row.
pub fn run_amplitude(
    cfg: &ScenarioConfig,
    report: &CheckReport,
    grid: &[Vec<f64>],
    opts: &RunOptions,
) -> Result<Vec<AmplitudeRow>, PipelineError> {
    let certified = certify(report, opts)?;
    let setup = stationary_setup(cfg, opts.prefactor)?;
    Ok(par_map(grid, |w| AmplitudeRow {
        w: w.clone(),
        result: setup.problem.leading_amplitude(w, &setup.amplitude).map_err(|e| e.to_string()),
        prefactor: opts.prefactor,
        certified,
    }))
}

/// Order-preserving map over scoped worker threads; every item is
/// independent, so the output does not depend on the worker count.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    par_map_with(std::thread::available_parallelism().map_or(1, |n| n.get()), items, f)
}

fn par_map_with<T: Sync, R: Send>(workers: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleQuantity {
    TraceKernel,
    Amplitude,
    Wavepacket,
}

impl OracleQuantity {
    pub fn name(self) -> &'static str {
        match self {
            OracleQuantity::TraceKernel => "trace_kernel",
            OracleQuantity::Amplitude => "amplitude",
            OracleQuantity::Wavepacket => "wavepacket",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "trace_kernel" => Some(OracleQuantity::TraceKernel),
            "amplitude" => Some(OracleQuantity::Amplitude),
            "wavepacket" => Some(OracleQuantity::Wavepacket),
            _ => None,
        }
    }

    /// λ values (amplitude, wavepacket frequency) or ε values (kernel).
    pub fn default_sweep(self, cfg: &ScenarioConfig) -> Vec<f64> {
        match self {
            OracleQuantity::TraceKernel => cfg.quadrature.epsilons.clone(),
            OracleQuantity::Amplitude => vec![10.0, 20.0, 40.0],
            OracleQuantity::Wavepacket => vec![20.0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleRow {
    pub scenario: String,
    pub quantity: OracleQuantity,
    /// λ for amplitude and wavepacket rows, ε for kernel rows (0 = extrapolated).
    pub sweep: f64,
    pub oracle: Complex64,
    pub predicted: Option<Complex64>,
    pub ratio: f64,
    pub error_estimate: f64,
    pub verdict: Verdict,
    pub prefactor: PrefactorMode,
    pub certified: bool,
    pub note: String,
}

pub fn run_oracle(
    cfg: &ScenarioConfig,
    report: &CheckReport,
    quantity: OracleQuantity,
    sweep: &[f64],
    opts: &RunOptions,
) -> Result<Vec<OracleRow>, PipelineError> {
    let certified = certify(report, opts)?;
    let setup = stationary_setup(cfg, opts.prefactor)?;
    let row = |sweep: f64| OracleRow {
        scenario: cfg.name.clone(),
        quantity,
        sweep,
        oracle: Complex64::new(f64::NAN, f64::NAN),
        predicted: None,
        ratio: f64::NAN,
        error_estimate: f64::NAN,
        verdict: Verdict::Inconclusive,
        prefactor: opts.prefactor,
        certified,
        note: String::new(),
    };
    let mut rows = Vec::new();
    match quantity {
        OracleQuantity::Amplitude => {
            let w0 = cfg.w0.clone().ok_or_else(|| PipelineError::Unsupported("amplitude sweeps need [chart] w0".into()))?;
            let spec = cfg.quadrature.amplitude_spec();
            let n_x = cfg.chart.bar_i().len() + cfg.chart.bar_ip().len();
            let cost = cfg.quadrature.amplitude_cost(n_x, setup.restricted.phase.n_theta());
            rows = par_map(sweep, |&l| {
                let w = cfg.chart.scale(&w0, l);
                let mut r = row(l);
                if cost > cfg.quadrature.max_oracle_points {
                    r.note = over_budget(cost, cfg);
                    return r;
                }
                match (setup.problem.leading_amplitude(&w, &setup.amplitude), amplitude_oracle(&setup.problem, &w, &setup.amplitude, &spec)) {
                    (Ok(p), Ok(o)) => {
                        r.oracle = o.value;
                        r.predicted = Some(p.b0);
                        r.ratio = o.value.norm() / p.b0.norm();
                        r.error_estimate = o.error_estimate;
                        let close = (o.value - p.b0).norm() <= ORACLE_TOL * p.b0.norm().max(1e-300);
                        r.verdict = if o.value.norm() == 0.0 && p.b0.norm() == 0.0 { Verdict::Pass } else { Verdict::of(close) };
                        r.note = format!("w={} phase_diff={}", fmt_vec(&w), num((o.value / p.b0).arg()));
                    }
                    (Err(e), _) => r.note = format!("prediction: {e}"),
                    (_, Err(e)) => r.note = format!("oracle: {e}"),
                }
                r
            });
        }
        OracleQuantity::TraceKernel => {
            let k = cfg.embedding.dim_x;
            let point = cfg.quadrature.kernel_point.clone().unwrap_or_else(|| {
                let mut p = vec![0.5; k];
                p.extend(vec![0.7; k]);
                p
            });
            let (x, xp) = point.split_at(k);
            let mut eps = sweep.to_vec();
            eps.sort_by(|a, b| b.total_cmp(a));
            let spec = cfg.quadrature.integral_spec().with_epsilons(&eps);
            let cost = crate::config::QuadratureConfig::integral_cost(&spec, setup.restricted.phase.n_theta());
            if cost > cfg.quadrature.max_oracle_points {
                let mut r = row(0.0);
                r.note = over_budget(cost, cfg);
                return Ok(vec![r]);
            }
            let on_support = on_singular_support(&setup.restricted, x, xp, cfg.seed)?;
            // Off the singular support the kernel is smooth but in general not
            // determined by Λ; it vanishes exactly for θ-independent amplitudes
            // and phases linear in θ.
            let predicted = (!on_support && kernel_is_delta_type(cfg, &setup.restricted)).then_some(Complex64::new(0.0, 0.0));
            let note = format!("x={} x'={} {}", fmt_vec(x), fmt_vec(xp), if on_support { "on the singular support" } else { "off the singular support" });
            let (result, trace) = match trace_kernel_value(&setup.restricted, &setup.amplitude, x, xp, &spec) {
                Ok(r) => {
                    let t = r.epsilon_trace.clone();
                    (Ok(r), t)
                }
                Err(OracleError::Inconclusive { trace, corrections }) => {
                    (Err(format!("extrapolation inconclusive (corrections {corrections:?})")), trace)
                }
                Err(e) => return Err(PipelineError::Stage { stage: "oscquad", message: e.to_string() }),
            };
            let scale = trace.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max);
            for (e, v) in &trace {
                let mut r = row(*e);
                r.oracle = *v;
                r.predicted = predicted;
                r.verdict = Verdict::Info;
                r.note = note.clone();
                rows.push(r);
            }
            let mut r = row(0.0);
            r.predicted = predicted;
            r.note = note;
            match result {
                Ok(res) => {
                    r.oracle = res.value;
                    r.error_estimate = res.error_estimate;
                    r.verdict = match predicted {
                        Some(_) => Verdict::of(res.value.norm() <= 1e-6 + 1e-2 * scale),
                        None => Verdict::Info,
                    };
                }
                Err(m) => r.note = format!("{}; {m}", r.note),
            }
            rows.push(r);
        }
        OracleQuantity::Wavepacket => {
            let q = &cfg.quadrature;
            let grid = q.packet_output_grid();
            rows = par_map(sweep, |&p0| {
                let mut r = row(p0);
                let packet = WavePacket { x0: q.packet_x0, p0, sigma: q.packet_sigma };
                let spec = q.packet_spec(p0, setup.restricted.phase.n_theta());
                let cost = crate::config::QuadratureConfig::integral_cost(&spec, setup.restricted.phase.n_theta())
                    * (q.packet_nodes * grid.len()) as f64;
                if cost > q.max_oracle_points {
                    r.note = over_budget(cost, cfg);
                    return r;
                }
                match wavepacket_operator_check(&setup.restricted, &setup.amplitude, &packet, &grid, q.packet_nodes, &spec, &setup.crit.points) {
                    Ok(c) => {
                        r.error_estimate = c.output.iter().map(|o| o.error_estimate).fold(0.0, f64::max);
                        r.note = format!("mass_ratio={}", c.mass_ratio);
                        if let Some(center) = c.center {
                            r.oracle = Complex64::new(center, 0.0);
                        }
                        if let Some((px, pp)) = c.predicted {
                            r.predicted = Some(Complex64::new(px, 0.0));
                            r.note = format!("{} predicted_p={pp}", r.note);
                            if let Some(center) = c.center {
                                if (px - packet.x0).abs() > PACKET_TOL {
                                    r.ratio = (center - packet.x0) / (px - packet.x0);
                                }
                                r.verdict = Verdict::of((center - px).abs() < PACKET_TOL);
                            }
                        }
                    }
                    Err(e) => r.note = e.to_string(),
                }
                r
            });
        }
    }
    Ok(rows)
}

fn over_budget(cost: f64, cfg: &ScenarioConfig) -> String {
    format!(
        "skipped: quadrature needs ~{} evaluations, above max_oracle_points = {}",
        num(cost),
        num(cfg.quadrature.max_oracle_points)
    )
}

fn kernel_is_delta_type(cfg: &ScenarioConfig, restricted: &RestrictedPhase) -> bool {
    let (Some(phase), Some(amp)) = (cfg.source.phase(), cfg.amplitude.as_ref()) else { return false };
    let th = phase.theta_slots();
    let amp_flat = th.iter().all(|&s| !amp.re.depends_on(s) && !amp.im.as_ref().is_some_and(|i| i.depends_on(s)));
    let r = &restricted.phase;
    let linear = r.grad_theta().iter().all(|g| r.theta_slots().iter().all(|&s| !g.depends_on(s)));
    amp_flat && linear
}

/// Whether `∂_θφ_XX(x, x′, ·)` vanishes somewhere on the θ-sphere.
fn on_singular_support(restricted: &RestrictedPhase, x: &[f64], xp: &[f64], seed: u64) -> Result<bool, PipelineError> {
    let phase = &restricted.phase;
    let layout = phase.layout();
    let mut cons = phase.grad_theta().to_vec();
    for (s, v) in phase.base_slots().iter().zip(x).chain(phase.primed_slots().iter().zip(xp)) {
        cons.push(slot_minus(layout, *s, *v));
    }
    let sub = ConstraintSubmanifold::new(layout, cons)
        .and_then(|s| s.conic(phase.theta_slots().to_vec()).with_domain(phase.domain().to_vec()))
        .map_err(stage("geom"))?;
    let n = layout.total_dim();
    let seeds: Vec<Vec<f64>> = sphere_grid(phase.n_theta(), 64, seed)
        .into_iter()
        .map(|d| {
            let mut c = vec![0.0; n];
            for (s, v) in phase.base_slots().iter().zip(x).chain(phase.primed_slots().iter().zip(xp)) {
                c[*s] = *v;
            }
            for (s, v) in phase.theta_slots().iter().zip(d) {
                c[*s] = v;
            }
            c
        })
        .collect();
    let found = sub.solve_points(&seeds, &SolveOptions::default(), 1e-6).map_err(stage("geom"))?;
    Ok(found.points.iter().any(|p| sub.in_domain(p) && phase.in_domain(p)))
}

/// Oracle against both prefactor conventions at each λ.
#[derive(Clone, Debug)]
pub struct PrefactorComparison {
    pub lambda: f64,
    pub oracle: Complex64,
    pub derived: Complex64,
    pub paper: Complex64,
}

impl PrefactorComparison {
    pub fn ratio(&self, mode: PrefactorMode) -> f64 {
        let p = match mode {
            PrefactorMode::Derived => self.derived,
            PrefactorMode::Paper => self.paper,
        };
        self.oracle.norm() / p.norm()
    }
}

#[derive(Clone, Debug)]
pub struct PrefactorDecision {
    pub rows: Vec<PrefactorComparison>,
    /// The mode within tolerance at every λ while the other is off by at
    /// least `2π·0.8` at every λ.
    pub confirmed: Option<PrefactorMode>,
    /// Smallest factor separating the rejected mode from the oracle.
    pub rejection_factor: f64,
}

pub fn disambiguate_prefactor(cfg: &ScenarioConfig, lambdas: &[f64]) -> Result<PrefactorDecision, PipelineError> {
    let derived = stationary_setup(cfg, PrefactorMode::Derived)?;
    let paper = stationary_setup(cfg, PrefactorMode::Paper)?;
    let w0 = cfg.w0.clone().ok_or_else(|| PipelineError::Unsupported("prefactor comparison needs [chart] w0".into()))?;
    let spec = cfg.quadrature.amplitude_spec();
    let mut rows = Vec::new();
    for &l in lambdas {
        let w = cfg.chart.scale(&w0, l);
        let o = amplitude_oracle(&derived.problem, &w, &derived.amplitude, &spec).map_err(stage("oscquad"))?;
        let d = derived.problem.leading_amplitude(&w, &derived.amplitude).map_err(stage("statphase"))?;
        let p = paper.problem.leading_amplitude(&w, &paper.amplitude).map_err(stage("statphase"))?;
        rows.push(PrefactorComparison { lambda: l, oracle: o.value, derived: d.b0, paper: p.b0 });
    }
    let within = |m: PrefactorMode| rows.iter().all(|r| (r.ratio(m) - 1.0).abs() <= ORACLE_TOL);
    let separation = |m: PrefactorMode| {
        rows.iter().map(|r| r.ratio(m).max(1.0 / r.ratio(m))).fold(f64::INFINITY, f64::min)
    };
    let threshold = 2.0 * PI * 0.8;
    let (confirmed, rejection_factor) = match (within(PrefactorMode::Derived), within(PrefactorMode::Paper)) {
        (true, false) if separation(PrefactorMode::Paper) >= threshold => {
            (Some(PrefactorMode::Derived), separation(PrefactorMode::Paper))
        }
        (false, true) if separation(PrefactorMode::Derived) >= threshold => {
            (Some(PrefactorMode::Paper), separation(PrefactorMode::Derived))
        }
        _ => (None, separation(PrefactorMode::Paper).min(separation(PrefactorMode::Derived))),
    };
    Ok(PrefactorDecision { rows, confirmed, rejection_factor })
}
