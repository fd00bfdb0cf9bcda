//! Shared property measurements for the acceptance and property suites.
#![allow(dead_code)]

use fiotrace::config::{Overrides, ScenarioConfig};
use fiotrace::pipeline::{phase_samples, run_check, stationary_setup, RunOptions, StationarySetup};
use fiotrace::scenarios::{load_builtin, Expectation, BUILTINS};
use fiotrace_core::phase::PhaseFunction;
use fiotrace_core::rng;
use fiotrace_core::stationary::PrefactorMode;

pub fn scenario(name: &str, params: &[&str]) -> ScenarioConfig {
    load_builtin(name, &Overrides::default().with_params(params).unwrap()).unwrap()
}

pub fn with_seed(name: &str, seed: u64) -> ScenarioConfig {
    load_builtin(name, &Overrides { seed: Some(seed), ..Overrides::default() }).unwrap()
}

pub fn all_scenarios() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|b| b.name)
}

pub fn certified_scenarios() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().filter(|b| b.expectation == Expectation::Passes).map(|b| b.name)
}

/// One in-domain phase point drawn from `seed`.
pub fn phase_point(phase: &PhaseFunction, seed: u64) -> Vec<f64> {
    phase_samples(phase, 1, 1.0, seed).pop().expect("domain has interior points")
}

/// `|Σ θ_j ∂_{θ_j} φ − φ|` with symbolic derivatives.
pub fn euler_residual(phase: &PhaseFunction, c: &[f64]) -> f64 {
    let phi = phase.phi();
    let euler: f64 = phase.theta_slots().iter().map(|&s| c[s] * phi.differentiate(s).evaluate(c).unwrap()).sum();
    (euler - phi.evaluate(c).unwrap()).abs()
}

/// Largest relative gap between symbolic and central-difference first derivatives.
pub fn derivative_gap(phase: &PhaseFunction, c: &[f64]) -> f64 {
    let phi = phase.phi();
    let mut worst: f64 = 0.0;
    for s in 0..c.len() {
        let h = 1e-5 * c[s].abs().max(1.0);
        let (mut up, mut dn) = (c.to_vec(), c.to_vec());
        up[s] += h;
        dn[s] -= h;
        let fd = (phi.evaluate(&up).unwrap() - phi.evaluate(&dn).unwrap()) / (2.0 * h);
        let sym = phi.differentiate(s).evaluate(c).unwrap();
        worst = worst.max((fd - sym).abs() / sym.abs().max(1.0));
    }
    worst
}

/// Chart point near `w0`: componentwise factors in `[0.5, 2]`, then conic scaling.
pub fn chart_point(cfg: &ScenarioConfig, factors: &[f64], lambda: f64) -> Vec<f64> {
    let w0 = cfg.w0.as_ref().unwrap();
    let w: Vec<f64> = w0.iter().zip(factors.iter().cycle()).map(|(a, f)| a * f).collect();
    cfg.chart.scale(&w, lambda)
}

pub fn derived_setup(cfg: &ScenarioConfig) -> StationarySetup {
    stationary_setup(cfg, PrefactorMode::Derived).unwrap()
}

/// Worst sample-set residuals pooled over seeds until at least `min` Λ points.
#[derive(Debug, Default)]
pub struct PooledResiduals {
    pub lambda_points: usize,
    pub isotropy_lambda: f64,
    pub traced_points: usize,
    pub isotropy_traced: f64,
    pub diagram: Option<f64>,
}

pub fn pooled_residuals(name: &str, min: usize) -> PooledResiduals {
    let mut out = PooledResiduals::default();
    let mut seed = 1;
    while out.lambda_points < min {
        let cfg = with_seed(name, seed);
        let rep = run_check(&cfg, &RunOptions::default()).unwrap();
        let p = rep.phase.as_ref().expect("builtins have phases");
        out.lambda_points += p.critical.points.len();
        out.isotropy_lambda = out.isotropy_lambda.max(p.isotropy_lambda);
        if let Some(t) = &p.traced {
            out.traced_points += t.points.len();
            out.isotropy_traced = out.isotropy_traced.max(t.isotropy);
        }
        if let Some(d) = p.diagram_residual {
            out.diagram = Some(out.diagram.unwrap_or(0.0).max(d));
        }
        seed += 1;
    }
    out
}

/// Deterministic stream of `[0.5, 2]` factors and `λ ∈ [0.5, 4]`.
pub fn chart_draws(count: usize, dim: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| ((0..dim).map(|_| rng::uniform(&mut r, 0.5, 2.0)).collect(), rng::uniform(&mut r, 0.5, 4.0)))
        .collect()
}

pub fn builtin_text(name: &str) -> &'static str {
    fiotrace::scenarios::builtin(name).unwrap().toml
}
