//! Scenario files: one scenario per TOML document with the sections
//! `space`, `params`, `phase` | `canonical`, `amplitude`, `chart`, `solver`,
//! `quadrature` and `outputs`. Expression values are quoted strings; every
//! expression is parsed and bound eagerly so that errors point at the
//! offending section and line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fiotrace_core::canonical::{lift_phase, lift_point_transformation, CanonicalMap};
use fiotrace_core::expr::{BlockLayout, Expression};
use fiotrace_core::oracle::{AmplitudeOracleSpec, MollifiedIntegralSpec};
use fiotrace_core::phase::PhaseFunction;
use fiotrace_core::stationary::CanonicalChart;
use fiotrace_core::trace::EmbeddingChart;
use serde::Deserialize;
use std::sync::Arc;
use thiserror::Error;
use toml::Spanned;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {source}")]
    Toml {
        origin: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("{origin}: [{section}]{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Invalid { origin: String, section: String, line: Option<usize>, message: String },
    #[error("unknown scenario `{0}` (see `list-scenarios`)")]
    UnknownScenario(String),
    #[error("bad parameter override `{0}`: expected key=value with a numeric value")]
    BadParam(String),
}

type Text = Spanned<String>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    description: Option<String>,
    seed: Option<u64>,
    space: RawSpace,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    phase: Option<Spanned<RawPhase>>,
    canonical: Option<Spanned<RawCanonical>>,
    amplitude: Option<RawAmplitude>,
    chart: Option<RawChart>,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    quadrature: QuadratureConfig,
    #[serde(default)]
    outputs: OutputsConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    dim_m: Spanned<usize>,
    dim_x: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    expr: Text,
    n_theta: Spanned<usize>,
    #[serde(default)]
    domain: Vec<Text>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCanonical {
    /// Base diffeomorphism ψ of M, lifted to `(ψ, dψ^{-T})`.
    lift: Option<Vec<Text>>,
    lift_inverse: Option<Vec<Text>>,
    /// Explicit components of g and g⁻¹ on `T*M`.
    forward: Option<Vec<Text>>,
    inverse: Option<Vec<Text>>,
    #[serde(default)]
    domain: Vec<Text>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAmplitude {
    re: Text,
    im: Option<Text>,
    #[serde(default)]
    order: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChart {
    #[serde(default)]
    i: Vec<usize>,
    #[serde(default)]
    ip: Vec<usize>,
    s: Option<Text>,
    w0: Option<Spanned<Vec<f64>>>,
}

/// Tolerances and sample counts of the geometric checks.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Margin below which `|(p, p′)|/|ζ|` counts as conormal.
    pub delta: f64,
    pub theta_directions: usize,
    pub intersection_seeds: usize,
    /// Half-width of the base box for random seeds.
    pub base_box: f64,
    pub clean_samples: usize,
    pub homogeneity_samples: usize,
    pub homogeneity_tol: f64,
    pub canonical_samples: usize,
    pub starts_per_axis: usize,
    pub base_radius: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            theta_directions: 96,
            intersection_seeds: 64,
            base_box: 1.0,
            clean_samples: 20,
            homogeneity_samples: 100,
            homogeneity_tol: 1e-9,
            canonical_samples: 40,
            starts_per_axis: 9,
            base_radius: 2.0,
        }
    }
}

/// Oracle settings: the damped θ-quadrature, the amplitude oracle window and
/// the wave-packet experiment.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub epsilons: Vec<f64>,
    pub nodes: Vec<usize>,
    pub radii: Vec<f64>,
    pub centers: Vec<f64>,
    pub order: usize,
    pub allow_short_radius: bool,
    /// `(x, x′)` for the trace-kernel oracle.
    pub kernel_point: Option<Vec<f64>>,
    pub amplitude_nodes: usize,
    pub window_product: f64,
    pub theta_window: f64,
    pub perp_window: f64,
    pub packet_x0: f64,
    pub packet_sigma: f64,
    /// Output grid `[lo, hi, step]`.
    pub packet_grid: Vec<f64>,
    pub packet_nodes: usize,
    pub packet_epsilons: Vec<f64>,
    /// θ-nodes along the packet frequency and across it.
    pub packet_theta_nodes: Vec<usize>,
    /// Oracle runs whose tensor grid exceeds this many integrand evaluations
    /// are skipped and marked inconclusive.
    pub max_oracle_points: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let m = MollifiedIntegralSpec::default();
        let a = AmplitudeOracleSpec::default();
        Self {
            epsilons: vec![0.004, 0.002, 0.001, 0.0005],
            nodes: vec![256],
            radii: m.radii,
            centers: m.centers,
            order: m.order,
            allow_short_radius: m.allow_short_radius,
            kernel_point: None,
            amplitude_nodes: a.nodes,
            window_product: a.window_product,
            theta_window: a.theta_window,
            perp_window: a.perp_window,
            packet_x0: 0.0,
            packet_sigma: 0.3,
            packet_grid: vec![-2.0, 2.0, 0.1],
            packet_nodes: 48,
            packet_epsilons: vec![0.004, 0.002, 0.001, 0.0005],
            packet_theta_nodes: vec![96, 320],
            max_oracle_points: 1e9,
        }
    }
}

impl QuadratureConfig {
    pub fn integral_spec(&self) -> MollifiedIntegralSpec {
        MollifiedIntegralSpec {
            epsilons: self.epsilons.clone(),
            nodes: self.nodes.clone(),
            radii: self.radii.clone(),
            centers: self.centers.clone(),
            order: self.order,
            allow_short_radius: self.allow_short_radius,
        }
    }

    pub fn amplitude_spec(&self) -> AmplitudeOracleSpec {
        AmplitudeOracleSpec {
            nodes: self.amplitude_nodes,
            window_product: self.window_product,
            theta_window: self.theta_window,
            perp_window: self.perp_window,
        }
    }

    /// Damped quadrature for a packet of frequency `p0`: the first θ-axis is
    /// centered on the frequency, the others cover the damping scale.
    pub fn packet_spec(&self, p0: f64, n_theta: usize) -> MollifiedIntegralSpec {
        let eps_min = self.packet_epsilons.iter().copied().fold(f64::INFINITY, f64::min);
        let wide = 6.0 / eps_min.sqrt();
        let along = p0.abs().max(10.0);
        let mut radii = vec![along];
        let mut centers = vec![p0];
        let mut nodes = vec![self.packet_theta_nodes.first().copied().unwrap_or(96)];
        for _ in 1..n_theta {
            radii.push(wide);
            centers.push(0.0);
            nodes.push(self.packet_theta_nodes.get(1).copied().unwrap_or(320));
        }
        MollifiedIntegralSpec {
            epsilons: self.packet_epsilons.clone(),
            nodes,
            radii,
            centers,
            order: self.order,
            allow_short_radius: true,
        }
    }

    /// Integrand evaluations of the amplitude oracle (main and ¾ grids).
    pub fn amplitude_cost(&self, n_x: usize, n_theta: usize) -> f64 {
        let grid = |n: usize| {
            let perp = (n as f64 * self.perp_window / self.theta_window).ceil();
            (n as f64).powi(n_x as i32 + 1) * perp.powi(n_theta as i32 - 1)
        };
        grid(self.amplitude_nodes) + grid(self.amplitude_nodes * 3 / 4)
    }

    /// Integrand evaluations of a damped θ-quadrature over all `ε`.
    pub fn integral_cost(spec: &MollifiedIntegralSpec, n_theta: usize) -> f64 {
        let per = |d: usize| match spec.nodes.len() {
            0 => 96.0,
            1 => spec.nodes[0] as f64,
            _ => spec.nodes.get(d).copied().unwrap_or(96) as f64,
        };
        (0..n_theta).map(per).product::<f64>() * spec.epsilons.len() as f64
    }

    pub fn packet_output_grid(&self) -> Vec<f64> {
        let (lo, hi, step) = (self.packet_grid[0], self.packet_grid[1], self.packet_grid[2]);
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + step * i as f64).collect()
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsConfig {
    /// Output directory; nothing is written unless set here or by `--out`.
    pub dir: Option<PathBuf>,
    pub report: String,
    pub checks: String,
    pub amplitude: String,
    pub oracle: String,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            dir: None,
            report: "report.txt".into(),
            checks: "checks.csv".into(),
            amplitude: "amplitude.csv".into(),
            oracle: "oracle.csv".into(),
        }
    }
}

/// Where the Lagrangian comes from.
#[derive(Clone, Debug)]
pub enum LagrangianSource {
    Phase(PhaseFunction),
    /// Cotangent lift of a point transformation together with its graph phase.
    Lift { map: CanonicalMap, phase: PhaseFunction },
    /// A canonical map given by its components (no phase available).
    Map(CanonicalMap),
}

impl LagrangianSource {
    pub fn phase(&self) -> Option<&PhaseFunction> {
        match self {
            LagrangianSource::Phase(p) | LagrangianSource::Lift { phase: p, .. } => Some(p),
            LagrangianSource::Map(_) => None,
        }
    }

    pub fn canonical(&self) -> Option<&CanonicalMap> {
        match self {
            LagrangianSource::Lift { map, .. } | LagrangianSource::Map(map) => Some(map),
            LagrangianSource::Phase(_) => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LagrangianSource::Phase(_) => "phase",
            LagrangianSource::Lift { .. } => "canonical-lift",
            LagrangianSource::Map(_) => "canonical-map",
        }
    }
}

/// Amplitude on the phase layout with its declared symbol order.
#[derive(Clone, Debug)]
pub struct AmplitudeSpec {
    pub re: Expression,
    pub im: Option<Expression>,
    pub order: f64,
}

/// A fully validated scenario.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    pub embedding: EmbeddingChart,
    pub source: LagrangianSource,
    pub amplitude: Option<AmplitudeSpec>,
    pub chart: CanonicalChart,
    pub w0: Option<Vec<f64>>,
    pub solver: SolverConfig,
    pub quadrature: QuadratureConfig,
    pub outputs: OutputsConfig,
}

/// Command-line overrides applied before validation.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub params: Vec<(String, f64)>,
    pub seed: Option<u64>,
}

impl Overrides {
    /// Parses `key=value` pairs.
    pub fn with_params<S: AsRef<str>>(mut self, pairs: &[S]) -> Result<Self, ConfigError> {
        for p in pairs {
            let p = p.as_ref();
            let (k, v) = p.split_once('=').ok_or_else(|| ConfigError::BadParam(p.into()))?;
            let v: f64 = v.trim().parse().map_err(|_| ConfigError::BadParam(p.into()))?;
            self.params.push((k.trim().to_string(), v));
        }
        Ok(self)
    }
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    parse_config(&text, &path.display().to_string(), overrides)
}

struct Ctx<'a> {
    origin: &'a str,
    source: &'a str,
    params: &'a BTreeMap<String, f64>,
}

impl Ctx<'_> {
    fn line(&self, span: std::ops::Range<usize>) -> usize {
        self.source[..span.start.min(self.source.len())].matches('\n').count() + 1
    }

    fn invalid(&self, section: &str, span: Option<std::ops::Range<usize>>, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            origin: self.origin.into(),
            section: section.into(),
            line: span.map(|s| self.line(s)),
            message: message.into(),
        }
    }

    fn expr(&self, section: &str, text: &Text, layout: &Arc<BlockLayout>) -> Result<Expression, ConfigError> {
        let e = Expression::parse(text.get_ref(), layout)
            .map_err(|e| self.invalid(section, Some(text.span()), format!("`{}`: {e}", text.get_ref())))?
            .with_params(self.params.iter());
        if let Some(p) = e.referenced_params().into_iter().find(|p| !self.params.contains_key(p)) {
            return Err(self.invalid(section, Some(text.span()), format!("parameter `${p}` is not defined in [params]")));
        }
        Ok(e.bind_params())
    }

    fn exprs(&self, section: &str, texts: &[Text], layout: &Arc<BlockLayout>) -> Result<Vec<Expression>, ConfigError> {
        texts.iter().map(|t| self.expr(section, t, layout)).collect()
    }
}

/// Parses and validates a scenario document; `origin` names it in errors.
pub fn parse_config(text: &str, origin: &str, overrides: &Overrides) -> Result<ScenarioConfig, ConfigError> {
    let mut raw: RawConfig = toml::from_str(text).map_err(|source| ConfigError::Toml { origin: origin.into(), source })?;
    for (k, v) in &overrides.params {
        match raw.params.get_mut(k) {
            Some(slot) => *slot = *v,
            None => {
                let known: Vec<&str> = raw.params.keys().map(String::as_str).collect();
                return Err(ConfigError::Invalid {
                    origin: origin.into(),
                    section: "params".into(),
                    line: None,
                    message: format!("unknown parameter `{k}` (defined: {})", known.join(", ")),
                });
            }
        }
    }
    let params = raw.params.clone();
    let cx = Ctx { origin, source: text, params: &params };

    let embedding = EmbeddingChart::new(*raw.space.dim_m.get_ref(), raw.space.dim_x)
        .map_err(|e| cx.invalid("space", Some(raw.space.dim_m.span()), e.to_string()))?;
    let k = embedding.dim_x;

    let source = match (&raw.phase, &raw.canonical) {
        (Some(_), Some(c)) => {
            return Err(cx.invalid(
                "canonical",
                Some(c.span()),
                "both [phase] and [canonical] are present; a scenario has exactly one Lagrangian source",
            ))
        }
        (None, None) => return Err(cx.invalid("phase", None, "one of [phase] or [canonical] is required")),
        (Some(p), None) => {
            let p = p.get_ref();
            let n = *p.n_theta.get_ref();
            if n == 0 {
                return Err(cx.invalid("phase", Some(p.n_theta.span()), "the th block must have positive size"));
            }
            let layout = embedding.phase_layout(n);
            let phi = cx.expr("phase", &p.expr, &layout)?;
            let domain = cx.exprs("phase", &p.domain, &layout)?;
            let phase = PhaseFunction::new(phi, &["x", "y"], &["xp", "yp"], "th", domain)
                .map_err(|e| cx.invalid("phase", Some(p.expr.span()), e.to_string()))?;
            LagrangianSource::Phase(phase)
        }
        (None, Some(c)) => {
            let span = c.span();
            let c = c.get_ref();
            let layout = embedding.cotangent_layout();
            let domain = cx.exprs("canonical", &c.domain, &layout)?;
            match (&c.lift, &c.lift_inverse, &c.forward, &c.inverse) {
                (Some(l), Some(li), None, None) => {
                    let psi = cx.exprs("canonical", l, &layout)?;
                    let psi_inv = cx.exprs("canonical", li, &layout)?;
                    let map = lift_point_transformation(&embedding, psi.clone(), psi_inv, domain.clone())
                        .map_err(|e| cx.invalid("canonical", Some(span.clone()), e.to_string()))?;
                    let phase = lift_phase(&embedding, &psi, &domain)
                        .map_err(|e| cx.invalid("canonical", Some(span), e.to_string()))?;
                    LagrangianSource::Lift { map, phase }
                }
                (None, None, Some(f), Some(i)) => {
                    let fwd = cx.exprs("canonical", f, &layout)?;
                    let inv = cx.exprs("canonical", i, &layout)?;
                    let map = CanonicalMap::new(&embedding, fwd, inv, domain)
                        .map_err(|e| cx.invalid("canonical", Some(span), e.to_string()))?;
                    LagrangianSource::Map(map)
                }
                _ => {
                    return Err(cx.invalid(
                        "canonical",
                        Some(span),
                        "give either `lift` and `lift_inverse`, or `forward` and `inverse`",
                    ))
                }
            }
        }
    };

    let amplitude = match (&raw.amplitude, source.phase()) {
        (Some(a), Some(phase)) => Some(AmplitudeSpec {
            re: cx.expr("amplitude", &a.re, phase.layout())?,
            im: a.im.as_ref().map(|t| cx.expr("amplitude", t, phase.layout())).transpose()?,
            order: a.order,
        }),
        (None, Some(phase)) => {
            Some(AmplitudeSpec { re: Expression::constant(1.0, phase.layout()), im: None, order: 0.0 })
        }
        (Some(a), None) => {
            return Err(cx.invalid("amplitude", Some(a.re.span()), "an amplitude needs a phase (use [phase] or a lift)"))
        }
        (None, None) => None,
    };

    let rc = raw.chart.unwrap_or_default();
    let mut chart =
        CanonicalChart::new(k, &rc.i, &rc.ip).map_err(|e| cx.invalid("chart", None, e.to_string()))?;
    if let Some(s) = &rc.s {
        let e = cx.expr("chart", s, &CanonicalChart::w_layout(k))?;
        chart = chart.with_generating_function(e).map_err(|e| cx.invalid("chart", Some(s.span()), e.to_string()))?;
    }
    let w0 = match rc.w0 {
        Some(w) if w.get_ref().len() != 2 * k => {
            return Err(cx.invalid("chart", Some(w.span()), format!("w0 needs {} coordinates", 2 * k)))
        }
        Some(w) => Some(w.into_inner()),
        None => None,
    };

    let q = &raw.quadrature;
    if q.packet_grid.len() != 3 || !(q.packet_grid[2] > 0.0 && q.packet_grid[1] > q.packet_grid[0]) {
        return Err(cx.invalid("quadrature", None, "packet_grid must be [lo, hi, step] with lo < hi and step > 0"));
    }
    if q.kernel_point.as_ref().is_some_and(|p| p.len() != 2 * k) {
        return Err(cx.invalid("quadrature", None, format!("kernel_point needs {} coordinates (x, x′)", 2 * k)));
    }
    let s = &raw.solver;
    if !(s.delta > 0.0 && s.base_box > 0.0 && s.base_radius > 0.0 && s.homogeneity_tol > 0.0) {
        return Err(cx.invalid("solver", None, "delta, base_box, base_radius and homogeneity_tol must be positive"));
    }

    Ok(ScenarioConfig {
        name: raw.name.unwrap_or_else(|| origin.to_string()),
        description: raw.description.unwrap_or_default(),
        seed: overrides.seed.or(raw.seed).unwrap_or(DEFAULT_SEED),
        params,
        embedding,
        source,
        amplitude,
        chart,
        w0,
        solver: raw.solver,
        quadrature: raw.quadrature,
        outputs: raw.outputs,
    })
}
